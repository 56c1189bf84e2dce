#include "doctest.h"
#include "hmae/exact.hpp"
#include "hmae/pauli.hpp"

using namespace hmae;

namespace {

// Dense oracle for the commutator Frobenius norm.
double dense_comm_norm(const HamiltonianTerm& a, const HamiltonianTerm& b) {
  MatrixXcd ma = a.coeff * to_dense(a.pauli);
  MatrixXcd mb = b.coeff * to_dense(b.pauli);
  return (ma * mb - mb * ma).norm();
}

// All Pauli strings on n qubits with weight 1 or 2.
std::vector<PauliString> low_weight_strings(int n) {
  std::vector<PauliString> out;
  const Pauli letters[3] = {Pauli::X, Pauli::Y, Pauli::Z};
  for (int i = 0; i < n; ++i)
    for (Pauli p : letters) {
      std::vector<Pauli> ops(n, Pauli::I);
      ops[i] = p;
      out.emplace_back(ops);
    }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      for (Pauli pi : letters)
        for (Pauli pj : letters) {
          std::vector<Pauli> ops(n, Pauli::I);
          ops[i] = pi;
          ops[j] = pj;
          out.emplace_back(ops);
        }
  return out;
}

}  // namespace

TEST_CASE("PauliString parse and support") {
  auto p = PauliString::parse("XZII");
  CHECK(p.n_qubits() == 4);
  CHECK(p.op(0) == Pauli::X);
  CHECK(p.op(1) == Pauli::Z);
  CHECK(p.support() == std::set<int>{0, 1});
  CHECK(p.weight() == 2);
  CHECK(p.to_string() == "XZII");
  CHECK_THROWS_AS(PauliString::parse("XQ"), validation_error);
}

TEST_CASE("commutes: symplectic rule matches dense commutator") {
  for (int n = 1; n <= 3; ++n) {
    auto strings = low_weight_strings(n);
    for (const auto& a : strings)
      for (const auto& b : strings) {
        MatrixXcd ma = to_dense(a), mb = to_dense(b);
        const bool dense_commutes = (ma * mb - mb * ma).norm() < 1e-12;
        CHECK(commutes(a, b) == dense_commutes);
      }
  }
}

TEST_CASE("commutator_frob_norm spec values") {
  auto x_i = HamiltonianTerm(1.0, PauliString::parse("XI"));
  auto z_i = HamiltonianTerm(1.0, PauliString::parse("ZI"));
  auto i_z = HamiltonianTerm(1.0, PauliString::parse("IZ"));
  CHECK(commutator_frob_norm(x_i, z_i) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(commutator_frob_norm(z_i, i_z) == 0.0);
  CHECK(commutator_frob_norm(HamiltonianTerm(0.0, PauliString::parse("XI")), z_i) == 0.0);
  CHECK_THROWS_AS(commutator_frob_norm(x_i, HamiltonianTerm(1.0, PauliString::parse("X"))),
                  shape_error);
}

TEST_CASE("commutator fast path vs dense oracle, exhaustive n<=4 low weight") {
  for (int n = 1; n <= 4; ++n) {
    auto strings = low_weight_strings(n);
    for (const auto& pa : strings)
      for (const auto& pb : strings) {
        HamiltonianTerm a(0.7, pa), b(-1.3, pb);
        CHECK(std::abs(commutator_frob_norm(a, b) - dense_comm_norm(a, b)) < 1e-10);
      }
  }
}

TEST_CASE("Hamiltonian canonicalization") {
  std::vector<HamiltonianTerm> terms{
      {1.0, PauliString::parse("ZI")},
      {2.0, PauliString::parse("IZ")},
      {0.5, PauliString::parse("ZI")},
  };
  Hamiltonian h(2, terms);
  REQUIRE(h.n_terms() == 2);
  // lexicographic order on the operator sequence: IZ before ZI
  CHECK(h.term(0).pauli.to_string() == "IZ");
  CHECK(h.term(1).pauli.to_string() == "ZI");
  CHECK(h.term(1).coeff.real() == doctest::Approx(1.5));

  // construction order does not matter
  std::reverse(terms.begin(), terms.end());
  CHECK(h == Hamiltonian(2, terms));
}

TEST_CASE("Hamiltonian validation errors") {
  CHECK_THROWS_AS(Hamiltonian(13, {}), size_limit_error);
  CHECK_THROWS_AS(Hamiltonian(2, {{cplx(0.0, 1.0), PauliString::parse("XX")}}),
                  validation_error);
  CHECK_THROWS_AS(Hamiltonian(2, {{1.0, PauliString::parse("X")}}), shape_error);
  // exactly cancelling duplicates vanish
  Hamiltonian h(1, {{1.0, PauliString::parse("X")}, {-1.0, PauliString::parse("X")}});
  CHECK(h.n_terms() == 0);
}
