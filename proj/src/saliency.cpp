#include "hmae/saliency.hpp"

#include <algorithm>
#include <cmath>

#include "hmae/rng.hpp"

namespace hmae {

namespace {

// min-max to [0,1]; a constant factor maps to 0.5 everywhere so it acts as a
// neutral multiplier in the enhanced mix
Eigen::VectorXd min_max_normalize(const Eigen::VectorXd& v) {
  const double lo = v.minCoeff(), hi = v.maxCoeff();
  if (hi - lo < 1e-12) return Eigen::VectorXd::Constant(v.size(), 0.5);
  return (v.array() - lo) / (hi - lo);
}

double max_abs_coeff(const Hamiltonian& h) {
  double m = 0.0;
  for (const auto& t : h.terms()) m = std::max(m, std::abs(t.coeff));
  return m;
}

double effective_k_b_t(const Hamiltonian& h, double k_b_t) {
  return k_b_t > 0.0 ? k_b_t : characteristic_energy_scale(h);
}

}  // namespace

std::string strategy_name(StrategyKind k) {
  switch (k) {
    case StrategyKind::Random: return "random";
    case StrategyKind::EnergyOnly: return "energy_only";
    case StrategyKind::BaseMultiplicative: return "base";
    case StrategyKind::ConvexPractical: return "practical";
    case StrategyKind::Enhanced: return "enhanced";
    case StrategyKind::QuantumQ: return "quantum";
    case StrategyKind::QuantumExtended: return "quantum_ext";
    case StrategyKind::DimensionallyConsistent: return "dimensional";
  }
  return "?";
}

StrategyKind strategy_from_name(const std::string& name) {
  for (StrategyKind k :
       {StrategyKind::Random, StrategyKind::EnergyOnly, StrategyKind::BaseMultiplicative,
        StrategyKind::ConvexPractical, StrategyKind::Enhanced, StrategyKind::QuantumQ,
        StrategyKind::QuantumExtended, StrategyKind::DimensionallyConsistent})
    if (strategy_name(k) == name) return k;
  throw config_error("unknown masking strategy '" + name + "'");
}

void SaliencyStrategy::validate(std::size_t n_tokens) const {
  if (alpha_temperature < 0.0) throw config_error("alpha_temperature must be >= 0");
  if (mask_ratio <= 0.0 || mask_ratio >= 1.0)
    throw config_error("mask_ratio must be in (0, 1)");
  if (n_tokens < 2)
    throw config_error("masking needs at least 2 tokens to keep one visible");
  if (beta_thermal <= 0.0) throw config_error("beta_thermal must be > 0");
}

double jaccard_overlap(const std::set<int>& a, const std::set<int>& b) {
  if (a.empty() || b.empty()) throw domain_error("jaccard_overlap: empty site set");
  std::size_t inter = 0;
  for (int s : a) inter += b.count(s);
  const std::size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

Eigen::MatrixXd adjacency(const Hamiltonian& h) {
  const auto k = static_cast<Eigen::Index>(h.n_terms());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(k, k);
  std::vector<std::set<int>> supports(h.n_terms());
  for (std::size_t i = 0; i < h.n_terms(); ++i) supports[i] = h.term(i).pauli.support();
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = i + 1; j < k; ++j) {
      const double jac = jaccard_overlap(supports[i], supports[j]);
      if (jac == 0.0) continue;
      const double comm = commutator_frob_norm(h.term(i), h.term(j));
      a(i, j) = a(j, i) = jac * std::exp(-comm);
    }
  return a;
}

Eigen::MatrixXd adjacency_normalized(const Hamiltonian& h, double beta_thermal) {
  const auto k = static_cast<Eigen::Index>(h.n_terms());
  if (k < 2) throw domain_error("adjacency_normalized: needs at least 2 terms");
  std::vector<std::set<int>> supports(h.n_terms());
  for (std::size_t i = 0; i < h.n_terms(); ++i) supports[i] = h.term(i).pauli.support();

  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(k, k);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j) {
      if (i == j) continue;
      jac(i, j) = jaccard_overlap(supports[i], supports[j]);
      if (jac(i, j) > 0.0)
        w(i, j) = std::exp(-beta_thermal * commutator_frob_norm(h.term(i), h.term(j)));
    }

  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double z = w.row(i).sum();  // softmax over N(i) only
    if (z <= 0.0) continue;
    for (Eigen::Index j = 0; j < k; ++j)
      if (jac(i, j) > 0.0) out(i, j) = jac(i, j) * w(i, j) / z;
  }
  return out;
}

Eigen::VectorXd base_saliency(const Hamiltonian& h) {
  Eigen::MatrixXd a = adjacency(h);
  Eigen::VectorXd s(a.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    s(i) = std::abs(h.term(static_cast<std::size_t>(i)).coeff) * (1.0 + a.row(i).sum());
  return s;
}

double qfim_element(const DensityMatrix& rho, const HamiltonianTerm& t_i,
                    const HamiltonianTerm& t_j) {
  MatrixXcd hi = to_dense(t_i.pauli);
  MatrixXcd hj = to_dense(t_j.pauli);
  MatrixXcd comm = hi * hj - hj * hi;
  const double g = (rho.entries * comm.adjoint() * comm).trace().real();
  return std::max(g, 0.0);
}

Eigen::VectorXd quantum_saliency(const Hamiltonian& h, double beta, bool corrected) {
  const auto k = static_cast<Eigen::Index>(h.n_terms());
  DensityMatrix rho = thermal_state(h, beta);
  Eigen::MatrixXd g(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = i; j < k; ++j)
      g(i, j) = g(j, i) =
          qfim_element(rho, h.term(static_cast<std::size_t>(i)), h.term(static_cast<std::size_t>(j)));

  const double c_max = max_abs_coeff(h);
  Eigen::VectorXd q = Eigen::VectorXd::Zero(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double ci = std::abs(h.term(static_cast<std::size_t>(i)).coeff);
    // g_ii == 0 identically, so the self term vanishes as written
    double v = ci * std::sqrt(g(i, i));
    if (corrected && c_max > 0.0) v = ci / c_max;
    for (Eigen::Index j = 0; j < k; ++j)
      if (j != i) v += std::abs(h.term(static_cast<std::size_t>(j)).coeff) * std::sqrt(g(i, j));
    q(i) = v;
  }
  return q;
}

Eigen::VectorXd practical_saliency(const Hamiltonian& h, double alpha_mix,
                                   double beta_thermal) {
  const auto k = static_cast<Eigen::Index>(h.n_terms());
  const double c_max = max_abs_coeff(h);
  Eigen::VectorXd structural = Eigen::VectorXd::Zero(k);
  if (k >= 2) structural = adjacency_normalized(h, beta_thermal).rowwise().sum();
  Eigen::VectorXd s(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double ci = std::abs(h.term(static_cast<std::size_t>(i)).coeff);
    s(i) = alpha_mix * (c_max > 0.0 ? ci / c_max : 0.0) + (1.0 - alpha_mix) * structural(i);
  }
  return s;
}

Eigen::VectorXd enhanced_saliency(const Hamiltonian& h, const Eigen::Vector3d& weights,
                                  const DensityMatrix& state) {
  const auto k = static_cast<Eigen::Index>(h.n_terms());
  Eigen::Vector3d w = weights;
  const double wsum = w.sum();
  if (wsum <= 0.0) throw config_error("enhanced_saliency: weights must sum to > 0");
  w /= wsum;

  // operator entropy from the |spectrum| distribution of the dense term
  Eigen::VectorXd op_entropy(k), e_frac(k), qfim_row(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto& t = h.term(static_cast<std::size_t>(i));
    auto sd = diagonalize(to_dense(Hamiltonian(h.n_qubits(), {t})));
    Eigen::VectorXd absev = sd.eigenvalues.cwiseAbs();
    const double z = absev.sum();
    double s = 0.0;
    if (z > 0.0)
      for (Eigen::Index m = 0; m < absev.size(); ++m) {
        const double p = absev(m) / z;
        if (p > 1e-14) s -= p * std::log(p);
      }
    op_entropy(i) = s;

    MatrixXcd dense_term = t.coeff * to_dense(t.pauli);
    e_frac(i) = std::abs((state.entries * dense_term).trace().real());
  }
  const double e_sum = e_frac.sum();
  if (e_sum > 1e-14)
    e_frac /= e_sum;
  else
    e_frac.setConstant(1.0 / static_cast<double>(k));  // all-zero expectations

  for (Eigen::Index i = 0; i < k; ++i) {
    double f = 0.0;
    for (Eigen::Index j = 0; j < k; ++j)
      if (j != i)
        f += qfim_element(state, h.term(static_cast<std::size_t>(i)),
                          h.term(static_cast<std::size_t>(j)));
    qfim_row(i) = f;
  }

  Eigen::VectorXd mix = w(0) * min_max_normalize(op_entropy) +
                        w(1) * min_max_normalize(e_frac) +
                        w(2) * min_max_normalize(qfim_row);
  return base_saliency(h).cwiseProduct(mix);
}

Eigen::VectorXd extended_saliency(const Hamiltonian& h, double beta, double k_b_t) {
  Eigen::VectorXd q = quantum_saliency(h, beta);
  const double e0 = characteristic_energy_scale(h);
  const double kt = effective_k_b_t(h, k_b_t);
  const double alpha_t = e0 / (e0 + kt);

  const double s_full = entanglement_entropy_halfchain(ground_state(h).state, h.n_qubits());
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    Hamiltonian reduced = h.without_term(static_cast<std::size_t>(i));
    double s_removed = 0.0;
    if (reduced.n_terms() > 0)
      s_removed = entanglement_entropy_halfchain(ground_state(reduced).state, h.n_qubits());
    q(i) += alpha_t * std::abs(s_full - s_removed);
  }
  return q;
}

Eigen::VectorXd dimensional_saliency(const Hamiltonian& h, double k_b_t,
                                     bool inverted_prefactor) {
  const auto k = static_cast<Eigen::Index>(h.n_terms());
  const double e0 = characteristic_energy_scale(h);
  const double kt = effective_k_b_t(h, k_b_t);
  const double prefactor = inverted_prefactor ? e0 / kt : kt / e0;
  Eigen::VectorXd structural = Eigen::VectorXd::Zero(k);
  if (k >= 2) structural = adjacency_normalized(h, 1.0 / kt).rowwise().sum();
  Eigen::VectorXd q(k);
  for (Eigen::Index i = 0; i < k; ++i)
    q(i) = std::abs(h.term(static_cast<std::size_t>(i)).coeff) / e0 *
           (1.0 + prefactor * structural(i));
  return q;
}

Eigen::VectorXd masking_probabilities(const Eigen::VectorXd& saliency,
                                      double alpha_temperature) {
  if (saliency.size() == 0) throw domain_error("masking_probabilities: empty scores");
  Eigen::ArrayXd z = alpha_temperature * saliency.array();
  z -= z.maxCoeff();
  Eigen::ArrayXd e = z.exp();
  return (e / e.sum()).matrix();
}

MaskingPlan sample_mask(const Eigen::VectorXd& probabilities, double mask_ratio,
                        std::uint64_t seed) {
  const auto k = probabilities.size();
  if (k < 2) throw domain_error("sample_mask: need at least 2 tokens");
  const auto m = std::clamp<Eigen::Index>(
      static_cast<Eigen::Index>(std::llround(mask_ratio * static_cast<double>(k))), 1, k - 1);

  MaskingPlan plan;
  plan.probabilities = probabilities;
  plan.seed = seed;
  Eigen::VectorXd rem = probabilities;
  Rng rng(seed);
  for (Eigen::Index draw = 0; draw < m; ++draw) {
    const double total = rem.sum();
    double u = rng.uniform() * total;
    Eigen::Index pick = -1;
    for (Eigen::Index i = 0; i < k; ++i) {
      if (rem(i) <= 0.0) continue;
      u -= rem(i);
      pick = i;
      if (u <= 0.0) break;
    }
    plan.masked.insert(static_cast<std::size_t>(pick));
    rem(pick) = 0.0;
  }
  return plan;
}

Eigen::VectorXd compute_saliency(const Hamiltonian& h, const SaliencyStrategy& strategy) {
  const auto k = static_cast<Eigen::Index>(h.n_terms());
  switch (strategy.kind) {
    case StrategyKind::Random:
      return Eigen::VectorXd::Zero(k);
    case StrategyKind::EnergyOnly: {
      Eigen::VectorXd s(k);
      for (Eigen::Index i = 0; i < k; ++i)
        s(i) = std::abs(h.term(static_cast<std::size_t>(i)).coeff);
      return s;
    }
    case StrategyKind::BaseMultiplicative:
      return base_saliency(h);
    case StrategyKind::ConvexPractical:
      return practical_saliency(h, strategy.alpha_mix);
    case StrategyKind::Enhanced: {
      GroundState gs = ground_state(h);
      DensityMatrix rho{gs.state * gs.state.adjoint()};
      return enhanced_saliency(h, strategy.weights, rho);
    }
    case StrategyKind::QuantumQ:
      return quantum_saliency(h, strategy.beta_thermal / characteristic_energy_scale(h),
                              strategy.corrected_quantum);
    case StrategyKind::QuantumExtended:
      return extended_saliency(h, strategy.beta_thermal / characteristic_energy_scale(h),
                               strategy.k_b_t);
    case StrategyKind::DimensionallyConsistent:
      return dimensional_saliency(h, strategy.k_b_t, strategy.inverted_prefactor);
  }
  throw config_error("compute_saliency: unknown strategy");
}

MaskingPlan make_masking_plan(const Hamiltonian& h, const SaliencyStrategy& strategy,
                              std::uint64_t seed) {
  strategy.validate(h.n_terms());
  Eigen::VectorXd scores = compute_saliency(h, strategy);
  Eigen::VectorXd probs = masking_probabilities(scores, strategy.alpha_temperature);
  return sample_mask(probs, strategy.mask_ratio, seed);
}

}  // namespace hmae
