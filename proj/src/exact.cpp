#include "hmae/exact.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace hmae {

namespace {

constexpr cplx kI{0.0, 1.0};

int site_bit(Eigen::Index basis, int site, int n) {
  return static_cast<int>((basis >> (n - 1 - site)) & 1);
}

// Action of a Pauli string on basis state |b>: returns (b', phase).
std::pair<Eigen::Index, cplx> pauli_action(const PauliString& p, Eigen::Index b, int n) {
  Eigen::Index out = b;
  cplx phase{1.0, 0.0};
  for (int site = 0; site < n; ++site) {
    const Eigen::Index bitmask = Eigen::Index(1) << (n - 1 - site);
    const bool bit = (b & bitmask) != 0;
    switch (p.op(site)) {
      case Pauli::I: break;
      case Pauli::X: out ^= bitmask; break;
      case Pauli::Y:
        out ^= bitmask;
        phase *= bit ? -kI : kI;
        break;
      case Pauli::Z:
        if (bit) phase = -phase;
        break;
    }
  }
  return {out, phase};
}

double coeff_norm_sum(const Hamiltonian& h) {
  double s = 0.0;
  for (const auto& t : h.terms()) s += std::abs(t.coeff);
  return s;
}

}  // namespace

void DensityMatrix::validate(double tol) const {
  if ((entries - entries.adjoint()).cwiseAbs().maxCoeff() > tol)
    throw validation_error("DensityMatrix: not Hermitian");
  if (std::abs(entries.trace() - cplx(1.0, 0.0)) > tol)
    throw validation_error("DensityMatrix: trace != 1");
  Eigen::SelfAdjointEigenSolver<MatrixXcd> es(entries, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -tol)
    throw validation_error("DensityMatrix: negative eigenvalue");
}

MatrixXcd pauli_matrix(Pauli p) {
  MatrixXcd m(2, 2);
  switch (p) {
    case Pauli::I: m << 1, 0, 0, 1; break;
    case Pauli::X: m << 0, 1, 1, 0; break;
    case Pauli::Y: m << 0, -kI, kI, 0; break;
    case Pauli::Z: m << 1, 0, 0, -1; break;
  }
  return m;
}

MatrixXcd to_dense(const PauliString& p) {
  const int n = p.n_qubits();
  const Eigen::Index dim = Eigen::Index(1) << n;
  MatrixXcd m = MatrixXcd::Zero(dim, dim);
  for (Eigen::Index b = 0; b < dim; ++b) {
    auto [out, phase] = pauli_action(p, b, n);
    m(out, b) += phase;
  }
  return m;
}

MatrixXcd to_dense(const Hamiltonian& h) {
  const int n = h.n_qubits();
  if (n > Hamiltonian::kMaxQubits)
    throw size_limit_error("to_dense: n_qubits exceeds dense limit");
  const Eigen::Index dim = Eigen::Index(1) << n;
  MatrixXcd m = MatrixXcd::Zero(dim, dim);
  for (const auto& t : h.terms()) {
    for (Eigen::Index b = 0; b < dim; ++b) {
      auto [out, phase] = pauli_action(t.pauli, b, n);
      m(out, b) += t.coeff * phase;
    }
  }
  return m;
}

void apply_term(const HamiltonianTerm& term, const VectorXcd& x, VectorXcd& y_accum) {
  const int n = term.pauli.n_qubits();
  for (Eigen::Index b = 0; b < x.size(); ++b) {
    auto [out, phase] = pauli_action(term.pauli, b, n);
    y_accum(out) += term.coeff * phase * x(b);
  }
}

VectorXcd apply_hamiltonian(const Hamiltonian& h, const VectorXcd& x) {
  VectorXcd y = VectorXcd::Zero(x.size());
  for (const auto& t : h.terms()) apply_term(t, x, y);
  return y;
}

SpectralDecomposition diagonalize(const MatrixXcd& hermitian) {
  if (hermitian.rows() != hermitian.cols())
    throw shape_error("diagonalize: matrix not square");
  if (hermitian.rows() > 4096)
    throw size_limit_error("diagonalize: dimension exceeds 4096");
  const double scale = std::max(1.0, hermitian.cwiseAbs().maxCoeff());
  if ((hermitian - hermitian.adjoint()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw validation_error("diagonalize: input not Hermitian");
  Eigen::SelfAdjointEigenSolver<MatrixXcd> es(hermitian);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("diagonalize: eigensolver failed");
  return {es.eigenvalues(), es.eigenvectors()};
}

GroundState ground_state(const Hamiltonian& h) {
  auto sd = diagonalize(to_dense(h));
  const bool degenerate =
      sd.eigenvalues.size() > 1 && sd.eigenvalues(1) - sd.eigenvalues(0) < 1e-10;
  return {sd.eigenvalues(0), sd.eigenvectors.col(0), degenerate};
}

DensityMatrix thermal_state(const Hamiltonian& h, double beta) {
  if (beta < 0.0 || !std::isfinite(beta))
    throw domain_error("thermal_state: beta must be finite and >= 0");
  auto sd = diagonalize(to_dense(h));
  const double lambda_min = sd.eigenvalues.minCoeff();
  VectorXd w = (-beta * (sd.eigenvalues.array() - lambda_min)).exp();
  w /= w.sum();
  DensityMatrix rho{sd.eigenvectors * w.asDiagonal() * sd.eigenvectors.adjoint()};
  // symmetrize away roundoff
  rho.entries = 0.5 * (rho.entries + rho.entries.adjoint()).eval();
  return rho;
}

DensityMatrix partial_trace(const DensityMatrix& rho, const std::set<int>& keep, int n_qubits) {
  if (keep.empty()) throw domain_error("partial_trace: empty keep set");
  for (int s : keep)
    if (s < 0 || s >= n_qubits) throw domain_error("partial_trace: site out of range");

  std::vector<int> kept(keep.begin(), keep.end());
  std::vector<int> traced;
  for (int s = 0; s < n_qubits; ++s)
    if (!keep.count(s)) traced.push_back(s);

  const int nk = static_cast<int>(kept.size());
  const int nt = static_cast<int>(traced.size());
  const Eigen::Index dk = Eigen::Index(1) << nk;
  const Eigen::Index dt = Eigen::Index(1) << nt;

  // scatter compact index bits into full basis index (MSB-first site order)
  auto scatter = [n_qubits](const std::vector<int>& sites, Eigen::Index compact) {
    Eigen::Index full = 0;
    const int m = static_cast<int>(sites.size());
    for (int j = 0; j < m; ++j)
      if ((compact >> (m - 1 - j)) & 1) full |= Eigen::Index(1) << (n_qubits - 1 - sites[j]);
    return full;
  };

  DensityMatrix out{MatrixXcd::Zero(dk, dk)};
  for (Eigen::Index r = 0; r < dk; ++r) {
    const Eigen::Index fr = scatter(kept, r);
    for (Eigen::Index c = 0; c < dk; ++c) {
      const Eigen::Index fc = scatter(kept, c);
      cplx acc{0.0, 0.0};
      for (Eigen::Index t = 0; t < dt; ++t) {
        const Eigen::Index ft = scatter(traced, t);
        acc += rho.entries(fr | ft, fc | ft);
      }
      out.entries(r, c) = acc;
    }
  }
  return out;
}

double von_neumann_entropy(const DensityMatrix& rho) {
  Eigen::SelfAdjointEigenSolver<MatrixXcd> es(rho.entries, Eigen::EigenvaluesOnly);
  double s = 0.0;
  for (Eigen::Index k = 0; k < es.eigenvalues().size(); ++k) {
    const double p = es.eigenvalues()(k);
    if (p < 1e-14) continue;
    s -= p * std::log(p);
  }
  return std::max(s, 0.0);
}

double qmi(const Hamiltonian& h, const SitePartition& partition, double beta) {
  const int n = h.n_qubits();
  if (partition.visible.empty() || partition.masked.empty())
    throw domain_error("qmi: both partition sides must be nonempty");
  std::set<int> all;
  for (int s : partition.visible) all.insert(s);
  for (int s : partition.masked) {
    if (partition.visible.count(s)) throw domain_error("qmi: partition sides overlap");
    all.insert(s);
  }
  if (static_cast<int>(all.size()) != n)
    throw domain_error("qmi: partition does not cover all sites");

  DensityMatrix rho = thermal_state(h, beta);
  const double s_v = von_neumann_entropy(partial_trace(rho, partition.visible, n));
  const double s_m = von_neumann_entropy(partial_trace(rho, partition.masked, n));
  const double s_vm = von_neumann_entropy(rho);
  double i_q = s_v + s_m - s_vm;
  if (i_q < 0.0 && i_q >= -1e-9) i_q = 0.0;
  return i_q;
}

SitePartition term_partition_to_site_partition(const Hamiltonian& h,
                                               const std::set<std::size_t>& masked_terms) {
  const std::size_t k = h.n_terms();
  if (masked_terms.empty() || masked_terms.size() > k)
    throw domain_error("term_partition_to_site_partition: invalid masked set");

  const int n = h.n_qubits();
  std::vector<double> masked_w(n, 0.0), visible_w(n, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    const double w = std::abs(h.term(i).coeff);
    auto& acc = masked_terms.count(i) ? masked_w : visible_w;
    for (int s : h.term(i).pauli.support()) acc[s] += w;
  }

  SitePartition out;
  for (int s = 0; s < n; ++s)
    (masked_w[s] > visible_w[s] ? out.masked : out.visible).insert(s);

  auto margin = [&](int s) { return masked_w[s] - visible_w[s]; };
  if (out.masked.empty()) {
    int best = *std::max_element(out.visible.begin(), out.visible.end(),
                                 [&](int a, int b) { return margin(a) < margin(b); });
    out.visible.erase(best);
    out.masked.insert(best);
  } else if (out.visible.empty()) {
    int best = *std::min_element(out.masked.begin(), out.masked.end(),
                                 [&](int a, int b) { return margin(a) < margin(b); });
    out.masked.erase(best);
    out.visible.insert(best);
  }
  return out;
}

std::pair<double, double> extremal_eigenvalues_power(const Hamiltonian& h, double tol,
                                                     int max_iter) {
  const int n = h.n_qubits();
  const Eigen::Index dim = Eigen::Index(1) << n;
  const double shift = coeff_norm_sum(h);  // upper bound on ||H||_2
  if (shift == 0.0) return {0.0, 0.0};
  // sign = +1 iterates H + s I (converges to lambda_max), -1 iterates s I - H.
  auto run = [&](double sign, double& best) -> bool {
    std::mt19937_64 rng(0x9e3779b97f4a7c15ull);
    VectorXcd v(dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
      const double re = static_cast<double>(rng() >> 11) * 0x1p-53 - 0.5;
      const double im = static_cast<double>(rng() >> 11) * 0x1p-53 - 0.5;
      v(i) = cplx(re, im);
    }
    v.normalize();
    best = 0.0;
    for (int it = 0; it < max_iter; ++it) {
      VectorXcd hv = apply_hamiltonian(h, v);
      const double mu = (v.dot(hv)).real();  // Rayleigh quotient of H
      best = mu;
      // |mu - lambda| <= residual for Hermitian operators
      if ((hv - mu * v).norm() <= tol * std::max(std::abs(mu), 1e-6 * shift)) return true;
      VectorXcd w = sign * hv + shift * v;
      const double norm = w.norm();
      if (norm == 0.0) return true;  // v in kernel of shifted operator
      v = w / norm;
    }
    return false;
  };

  double lo = 0.0, hi = 0.0;
  const bool ok_hi = run(+1.0, hi);
  const bool ok_lo = run(-1.0, lo);
  if (!ok_hi || !ok_lo)
    throw convergence_error("extremal_eigenvalues_power: no convergence", lo, hi);
  return {lo, hi};
}

double energy_gap(const Hamiltonian& h) {
  auto sd = diagonalize(to_dense(h));
  if (sd.eigenvalues.size() < 2) return 0.0;
  const double gap = sd.eigenvalues(1) - sd.eigenvalues(0);
  return gap < 1e-10 ? 0.0 : gap;
}

double characteristic_energy_scale(const Hamiltonian& h) {
  auto sd = diagonalize(to_dense(h));
  const double spread = sd.eigenvalues(sd.eigenvalues.size() - 1) - sd.eigenvalues(0);
  double gap = 0.0;
  if (sd.eigenvalues.size() > 1) {
    gap = sd.eigenvalues(1) - sd.eigenvalues(0);
    if (gap < 1e-10) gap = 0.0;
  }
  const double e0 = std::max(spread, gap);
  if (e0 <= 0.0)
    throw domain_error("characteristic_energy_scale: Hamiltonian has no energy scale");
  return e0;
}

CorrelationLength correlation_length(const Hamiltonian& h) {
  const int n = h.n_qubits();
  if (n < 4) throw domain_error("correlation_length: needs n_qubits >= 4");
  GroundState gs = ground_state(h);

  VectorXd prob = gs.state.cwiseAbs2();
  auto z_sign = [&](Eigen::Index b, int site) { return site_bit(b, site, n) ? -1.0 : 1.0; };
  std::vector<double> z_exp(n, 0.0);
  for (int s = 0; s < n; ++s)
    for (Eigen::Index b = 0; b < prob.size(); ++b) z_exp[s] += prob(b) * z_sign(b, s);

  std::vector<double> rs, log_c;
  for (int r = 1; r < n; ++r) {
    double zz = 0.0;
    for (Eigen::Index b = 0; b < prob.size(); ++b)
      zz += prob(b) * z_sign(b, 0) * z_sign(b, r);
    const double c = zz - z_exp[0] * z_exp[r];
    if (std::abs(c) > 1e-8) {
      rs.push_back(static_cast<double>(r));
      log_c.push_back(std::log(std::abs(c)));
    }
  }

  if (rs.size() < 2) return {0.0, true};
  const double m = rs.size();
  double sr = 0, sl = 0, srr = 0, srl = 0;
  for (std::size_t i = 0; i < rs.size(); ++i) {
    sr += rs[i];
    sl += log_c[i];
    srr += rs[i] * rs[i];
    srl += rs[i] * log_c[i];
  }
  const double denom = m * srr - sr * sr;
  if (denom == 0.0) return {0.0, true};
  const double slope = (m * srl - sr * sl) / denom;
  if (slope >= 0.0) return {0.0, true};
  const double xi = std::clamp(-1.0 / slope, 0.0, 10.0 * n);
  return {xi, false};
}

double entanglement_entropy_halfchain(const VectorXcd& state, int n_qubits) {
  if (std::abs(state.norm() - 1.0) > 1e-8)
    throw validation_error("entanglement_entropy_halfchain: state not normalized");
  const int na = n_qubits / 2;
  const int nb = n_qubits - na;
  if (na == 0) return 0.0;
  const Eigen::Index da = Eigen::Index(1) << na;
  const Eigen::Index db = Eigen::Index(1) << nb;
  // sites {0..na-1} are the high bits, so row index = leading bits
  Eigen::Map<const Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
      state.data(), da, db);
  Eigen::JacobiSVD<MatrixXcd> svd(m);
  double s = 0.0;
  for (Eigen::Index k = 0; k < svd.singularValues().size(); ++k) {
    const double p = svd.singularValues()(k) * svd.singularValues()(k);
    if (p < 1e-14) continue;
    s -= p * std::log(p);
  }
  return std::max(s, 0.0);
}

}  // namespace hmae
