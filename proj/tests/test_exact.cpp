#include <cmath>
#include <random>

#include "doctest.h"
#include "hmae/exact.hpp"

using namespace hmae;

namespace {

PauliString two_site(int n, int i, int j, Pauli pi, Pauli pj) {
  std::vector<Pauli> ops(n, Pauli::I);
  ops[i] = pi;
  ops[j] = pj;
  return PauliString(ops);
}

PauliString one_site(int n, int i, Pauli p) {
  std::vector<Pauli> ops(n, Pauli::I);
  ops[i] = p;
  return PauliString(ops);
}

Hamiltonian tfim(int n, double j, double h) {
  std::vector<HamiltonianTerm> terms;
  for (int i = 0; i + 1 < n; ++i)
    terms.emplace_back(-j, two_site(n, i, i + 1, Pauli::Z, Pauli::Z));
  for (int i = 0; i < n; ++i) terms.emplace_back(-h, one_site(n, i, Pauli::X));
  return Hamiltonian(n, terms);
}

Hamiltonian heisenberg2(double j) {
  std::vector<HamiltonianTerm> terms;
  for (Pauli p : {Pauli::X, Pauli::Y, Pauli::Z})
    terms.emplace_back(j, two_site(2, 0, 1, p, p));
  return Hamiltonian(2, terms);
}

Hamiltonian random_hamiltonian(int n, std::mt19937_64& rng) {
  std::vector<HamiltonianTerm> terms;
  const Pauli letters[3] = {Pauli::X, Pauli::Y, Pauli::Z};
  auto unif = [&] { return static_cast<double>(rng() >> 11) * 0x1p-53 * 2.0 - 1.0; };
  for (int i = 0; i + 1 < n; ++i)
    terms.emplace_back(unif(), two_site(n, i, i + 1, letters[rng() % 3], letters[rng() % 3]));
  for (int i = 0; i < n; ++i) terms.emplace_back(unif(), one_site(n, i, letters[rng() % 3]));
  return Hamiltonian(n, terms);
}

}  // namespace

TEST_CASE("to_dense spec examples") {
  Hamiltonian hz(1, {{1.0, PauliString::parse("Z")}});
  MatrixXcd mz = to_dense(hz);
  CHECK(mz(0, 0).real() == doctest::Approx(1.0));
  CHECK(mz(1, 1).real() == doctest::Approx(-1.0));
  CHECK(std::abs(mz(0, 1)) == 0.0);

  CHECK(to_dense(Hamiltonian(2, {})).norm() == 0.0);

  Hamiltonian hxx(2, {{0.5, PauliString::parse("XX")}});
  MatrixXcd mxx = to_dense(hxx);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(mxx(i, j).real() == doctest::Approx(i + j == 3 ? 0.5 : 0.0));
}

TEST_CASE("to_dense matches Kronecker product construction") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 5; ++rep) {
    Hamiltonian h = random_hamiltonian(4, rng);
    MatrixXcd m = MatrixXcd::Zero(16, 16);
    for (const auto& t : h.terms()) {
      MatrixXcd acc = MatrixXcd::Identity(1, 1);
      for (int s = 0; s < 4; ++s) {
        MatrixXcd next(acc.rows() * 2, acc.cols() * 2);
        MatrixXcd p = pauli_matrix(t.pauli.op(s));
        for (int a = 0; a < acc.rows(); ++a)
          for (int b = 0; b < acc.cols(); ++b) next.block(2 * a, 2 * b, 2, 2) = acc(a, b) * p;
        acc = next;
      }
      m += t.coeff * acc;
    }
    CHECK((to_dense(h) - m).norm() < 1e-12);
  }
}

TEST_CASE("diagonalize") {
  MatrixXcd d = MatrixXcd::Zero(2, 2);
  d(0, 0) = 3.0;
  d(1, 1) = -1.0;
  auto sd = diagonalize(d);
  CHECK(sd.eigenvalues(0) == doctest::Approx(-1.0));
  CHECK(sd.eigenvalues(1) == doctest::Approx(3.0));

  auto sx = diagonalize(to_dense(PauliString::parse("X")));
  CHECK(sx.eigenvalues(0) == doctest::Approx(-1.0));
  CHECK(sx.eigenvalues(1) == doctest::Approx(1.0));

  auto sh = diagonalize(to_dense(heisenberg2(1.0)));
  CHECK(sh.eigenvalues(0) == doctest::Approx(-3.0));
  for (int k = 1; k < 4; ++k) CHECK(sh.eigenvalues(k) == doctest::Approx(1.0));

  MatrixXcd bad(2, 2);
  bad << 0.0, 1.0, 0.0, 0.0;
  CHECK_THROWS_AS(diagonalize(bad), validation_error);
}

TEST_CASE("diagonalize residual invariant") {
  std::mt19937_64 rng(3);
  Hamiltonian h = random_hamiltonian(5, rng);
  MatrixXcd m = to_dense(h);
  auto sd = diagonalize(m);
  for (Eigen::Index k = 0; k < sd.eigenvalues.size(); ++k)
    CHECK((m * sd.eigenvectors.col(k) - sd.eigenvalues(k) * sd.eigenvectors.col(k)).norm() <=
          1e-8 * m.norm());
}

TEST_CASE("ground_state spec examples") {
  Hamiltonian hz(1, {{2.0, PauliString::parse("Z")}});
  CHECK(ground_state(hz).energy == doctest::Approx(-2.0));

  CHECK(ground_state(tfim(2, 1.0, 1.0)).energy ==
        doctest::Approx(-std::sqrt(5.0)).epsilon(1e-9));

  auto gs = ground_state(heisenberg2(1.0));
  CHECK(gs.energy == doctest::Approx(-3.0));
  CHECK(!gs.degenerate);
  CHECK(gs.state.norm() == doctest::Approx(1.0));
}

TEST_CASE("thermal_state") {
  Hamiltonian hz(1, {{1.0, PauliString::parse("Z")}});

  auto rho0 = thermal_state(hz, 0.0);
  CHECK((rho0.entries - 0.5 * MatrixXcd::Identity(2, 2)).norm() < 1e-12);

  auto rho_cold = thermal_state(hz, 200.0);
  CHECK(std::abs(rho_cold.entries(0, 0)) < 1e-12);
  CHECK(rho_cold.entries(1, 1).real() == doctest::Approx(1.0).epsilon(1e-12));

  auto rho1 = thermal_state(hz, 1.0);
  const double z = std::exp(-1.0) + std::exp(1.0);
  CHECK(rho1.entries(0, 0).real() == doctest::Approx(std::exp(-1.0) / z));
  CHECK(rho1.entries(1, 1).real() == doctest::Approx(std::exp(1.0) / z));

  CHECK_THROWS_AS(thermal_state(hz, -0.5), domain_error);
}

TEST_CASE("thermal state invariants and entropy monotonicity in beta") {
  std::mt19937_64 rng(17);
  for (int rep = 0; rep < 10; ++rep) {
    Hamiltonian h = random_hamiltonian(2 + static_cast<int>(rng() % 4), rng);
    double prev = std::numeric_limits<double>::infinity();
    for (double beta : {0.0, 0.3, 1.0, 3.0, 10.0}) {
      auto rho = thermal_state(h, beta);
      rho.validate();
      const double s = von_neumann_entropy(rho);
      CHECK(s <= prev + 1e-9);
      prev = s;
    }
  }
}

TEST_CASE("partial_trace spec examples") {
  // product state rho_A (x) rho_B
  MatrixXcd ra(2, 2), rb(2, 2);
  ra << 0.75, 0.1, 0.1, 0.25;
  rb << 0.5, cplx(0.0, -0.2), cplx(0.0, 0.2), 0.5;
  DensityMatrix prod{MatrixXcd::Zero(4, 4)};
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      prod.entries.block(2 * a, 2 * b, 2, 2) = ra(a, b) * rb;
  CHECK((partial_trace(prod, {0}, 2).entries - ra).norm() < 1e-12);
  CHECK((partial_trace(prod, {1}, 2).entries - rb).norm() < 1e-12);

  // Bell state reduces to I/2
  VectorXcd bell(4);
  bell << 1.0 / std::sqrt(2.0), 0.0, 0.0, 1.0 / std::sqrt(2.0);
  DensityMatrix rho_bell{bell * bell.adjoint()};
  CHECK((partial_trace(rho_bell, {0}, 2).entries - 0.5 * MatrixXcd::Identity(2, 2)).norm() <
        1e-12);

  DensityMatrix mixed{0.25 * MatrixXcd::Identity(4, 4)};
  CHECK((partial_trace(mixed, {1}, 2).entries - 0.5 * MatrixXcd::Identity(2, 2)).norm() < 1e-12);

  CHECK_THROWS_AS(partial_trace(mixed, {}, 2), domain_error);
  // full keep set is the identity
  CHECK((partial_trace(rho_bell, {0, 1}, 2).entries - rho_bell.entries).norm() < 1e-14);
}

TEST_CASE("von_neumann_entropy") {
  VectorXcd pure(2);
  pure << 1.0, 0.0;
  CHECK(von_neumann_entropy({pure * pure.adjoint()}) == doctest::Approx(0.0));
  CHECK(von_neumann_entropy({0.25 * MatrixXcd::Identity(4, 4)}) ==
        doctest::Approx(2.0 * std::log(2.0)));
  MatrixXcd half = 0.5 * MatrixXcd::Identity(2, 2);
  CHECK(von_neumann_entropy({half}) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("qmi spec examples") {
  Hamiltonian hzz(2, {{1.0, PauliString::parse("ZI")}, {1.0, PauliString::parse("IZ")}});
  SitePartition part{{0}, {1}};
  CHECK(qmi(hzz, part, 1.7) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(qmi(hzz, part, 0.0) == doctest::Approx(0.0));

  Hamiltonian hent(2, {{-1.0, PauliString::parse("XX")}, {-1.0, PauliString::parse("ZZ")}});
  CHECK(qmi(hent, part, 50.0) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-3));

  CHECK_THROWS_AS(qmi(hzz, SitePartition{{0, 1}, {}}, 1.0), domain_error);
  CHECK_THROWS_AS(qmi(hzz, SitePartition{{0}, {0}}, 1.0), domain_error);
}

TEST_CASE("qmi nonnegative on random Hamiltonians") {
  std::mt19937_64 rng(23);
  for (int rep = 0; rep < 10; ++rep) {
    const int n = 2 + static_cast<int>(rng() % 3);
    Hamiltonian h = random_hamiltonian(n, rng);
    SitePartition part;
    part.visible.insert(0);
    for (int s = 1; s < n; ++s) part.masked.insert(s);
    CHECK(qmi(h, part, 1.0) >= 0.0);
  }
}

TEST_CASE("term_partition_to_site_partition") {
  Hamiltonian h(2, {{1.0, PauliString::parse("ZI")}, {1.0, PauliString::parse("IZ")}});
  // canonical order: IZ (index 0) then ZI (index 1); mask the Z on site 1
  auto part = term_partition_to_site_partition(h, {0});
  CHECK(part.visible == std::set<int>{0});
  CHECK(part.masked == std::set<int>{1});

  // masking everything still yields a proper site bipartition via the repair rule
  auto rep = term_partition_to_site_partition(h, std::set<std::size_t>{0, 1});
  CHECK(rep.visible.size() == 1);
  CHECK(rep.masked.size() == 1);
  CHECK_THROWS_AS(term_partition_to_site_partition(h, {}), domain_error);

  // empty-V repair: the strong XX term drags both sites to M, site 1 moves back
  Hamiltonian h2(2, {{2.0, PauliString::parse("XX")}, {0.5, PauliString::parse("IZ")}});
  REQUIRE(h2.term(1).pauli.to_string() == "XX");
  auto part2 = term_partition_to_site_partition(h2, {1});
  CHECK(part2.visible == std::set<int>{1});
  CHECK(part2.masked == std::set<int>{0});
}

TEST_CASE("extremal_eigenvalues_power") {
  Hamiltonian hz(1, {{1.0, PauliString::parse("Z")}});
  auto [lo, hi] = extremal_eigenvalues_power(hz);
  CHECK(lo == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(hi == doctest::Approx(1.0).epsilon(1e-6));

  Hamiltonian hxx(2, {{3.0, PauliString::parse("XX")}});
  auto [lo2, hi2] = extremal_eigenvalues_power(hxx);
  CHECK(lo2 == doctest::Approx(-3.0).epsilon(1e-6));
  CHECK(hi2 == doctest::Approx(3.0).epsilon(1e-6));
}

TEST_CASE("power iteration matches dense diagonalization") {
  std::mt19937_64 rng(29);
  for (int rep = 0; rep < 20; ++rep) {
    const int n = 2 + static_cast<int>(rng() % 5);
    Hamiltonian h = random_hamiltonian(n, rng);
    auto sd = diagonalize(to_dense(h));
    auto [lo, hi] = extremal_eigenvalues_power(h, 1e-8, 100000);
    const double scale = std::max({1e-12, std::abs(sd.eigenvalues(0)),
                                   std::abs(sd.eigenvalues(sd.eigenvalues.size() - 1))});
    CHECK(std::abs(lo - sd.eigenvalues(0)) / scale < 1e-5);
    CHECK(std::abs(hi - sd.eigenvalues(sd.eigenvalues.size() - 1)) / scale < 1e-5);
  }
}

TEST_CASE("characteristic_energy_scale and energy_gap") {
  Hamiltonian hz(1, {{1.0, PauliString::parse("Z")}});
  CHECK(characteristic_energy_scale(hz) == doctest::Approx(2.0));
  CHECK(energy_gap(hz) == doctest::Approx(2.0));

  CHECK(characteristic_energy_scale(heisenberg2(1.0)) == doctest::Approx(4.0));

  Hamiltonian hz5(1, {{5.0, PauliString::parse("Z")}});
  CHECK(characteristic_energy_scale(hz5) == doctest::Approx(10.0));

  CHECK_THROWS_AS(characteristic_energy_scale(Hamiltonian(2, {})), domain_error);
}

TEST_CASE("correlation_length") {
  // product ground state: all connected correlators vanish
  std::vector<HamiltonianTerm> terms;
  for (int i = 0; i < 4; ++i) terms.emplace_back(1.0, one_site(4, i, Pauli::Z));
  auto res = correlation_length(Hamiltonian(4, terms));
  CHECK(res.xi == 0.0);
  CHECK(res.degenerate_fit);

  // paramagnetic TFIM has a finite correlation length
  auto para = correlation_length(tfim(6, 1.0, 2.0));
  CHECK(!para.degenerate_fit);
  CHECK(para.xi > 0.0);
  CHECK(para.xi <= 60.0);

  CHECK_THROWS_AS(correlation_length(tfim(3, 1.0, 2.0)), domain_error);
}

TEST_CASE("correlation_length matches an independent fit oracle") {
  Hamiltonian h = tfim(6, 1.0, 2.0);
  GroundState gs = ground_state(h);
  MatrixXcd rho = gs.state * gs.state.adjoint();
  DensityMatrix full{rho};

  auto z_op = [&](int site) {
    return to_dense(one_site(6, site, Pauli::Z));
  };
  std::vector<double> rs, ls;
  const double z0 = (z_op(0) * rho).trace().real();
  for (int r = 1; r < 6; ++r) {
    const double zz = (z_op(0) * z_op(r) * rho).trace().real();
    const double zr = (z_op(r) * rho).trace().real();
    const double c = zz - z0 * zr;
    if (std::abs(c) > 1e-8) {
      rs.push_back(r);
      ls.push_back(std::log(std::abs(c)));
    }
  }
  REQUIRE(rs.size() >= 2);
  double sr = 0, sl = 0, srr = 0, srl = 0;
  for (std::size_t i = 0; i < rs.size(); ++i) {
    sr += rs[i];
    sl += ls[i];
    srr += rs[i] * rs[i];
    srl += rs[i] * ls[i];
  }
  const double slope = (rs.size() * srl - sr * sl) / (rs.size() * srr - sr * sr);
  REQUIRE(slope < 0.0);
  CHECK(correlation_length(h).xi == doctest::Approx(-1.0 / slope).epsilon(1e-9));
}

TEST_CASE("entanglement_entropy_halfchain") {
  VectorXcd prod = VectorXcd::Zero(4);
  prod(0) = 1.0;
  CHECK(entanglement_entropy_halfchain(prod, 2) == doctest::Approx(0.0));

  VectorXcd bell(4);
  bell << 1.0 / std::sqrt(2.0), 0.0, 0.0, 1.0 / std::sqrt(2.0);
  CHECK(entanglement_entropy_halfchain(bell, 2) == doctest::Approx(std::log(2.0)));

  VectorXcd ghz = VectorXcd::Zero(16);
  ghz(0) = 1.0 / std::sqrt(2.0);
  ghz(15) = 1.0 / std::sqrt(2.0);
  CHECK(entanglement_entropy_halfchain(ghz, 4) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("Schmidt symmetry: S(rho_V) == S(rho_M) for pure states") {
  std::mt19937_64 rng(31);
  for (int rep = 0; rep < 5; ++rep) {
    const int n = 3 + static_cast<int>(rng() % 2);
    Hamiltonian h = random_hamiltonian(n, rng);
    GroundState gs = ground_state(h);
    DensityMatrix rho{gs.state * gs.state.adjoint()};
    for (int cut = 1; cut < n; ++cut) {
      std::set<int> a, b;
      for (int s = 0; s < n; ++s) (s < cut ? a : b).insert(s);
      CHECK(std::abs(von_neumann_entropy(partial_trace(rho, a, n)) -
                     von_neumann_entropy(partial_trace(rho, b, n))) < 1e-9);
    }
  }
}
