#include "hmae/pauli.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace hmae {

char pauli_char(Pauli p) {
  switch (p) {
    case Pauli::I: return 'I';
    case Pauli::X: return 'X';
    case Pauli::Y: return 'Y';
    case Pauli::Z: return 'Z';
  }
  return '?';
}

Pauli pauli_from_char(char c) {
  switch (c) {
    case 'I': return Pauli::I;
    case 'X': return Pauli::X;
    case 'Y': return Pauli::Y;
    case 'Z': return Pauli::Z;
    default: throw validation_error(std::string("invalid Pauli letter '") + c + "'");
  }
}

PauliString PauliString::parse(const std::string& letters) {
  std::vector<Pauli> ops;
  ops.reserve(letters.size());
  for (char c : letters) ops.push_back(pauli_from_char(c));
  return PauliString(std::move(ops));
}

std::set<int> PauliString::support() const {
  std::set<int> s;
  for (int i = 0; i < n_qubits(); ++i)
    if (op(i) != Pauli::I) s.insert(i);
  return s;
}

int PauliString::weight() const {
  int w = 0;
  for (Pauli p : ops_)
    if (p != Pauli::I) ++w;
  return w;
}

std::string PauliString::to_string() const {
  std::string s;
  s.reserve(ops_.size());
  for (Pauli p : ops_) s.push_back(pauli_char(p));
  return s;
}

bool commutes(const PauliString& a, const PauliString& b) {
  if (a.n_qubits() != b.n_qubits())
    throw shape_error("commutes: mismatched qubit counts");
  int anticommuting_sites = 0;
  for (int i = 0; i < a.n_qubits(); ++i) {
    Pauli pa = a.op(i), pb = b.op(i);
    if (pa != Pauli::I && pb != Pauli::I && pa != pb) ++anticommuting_sites;
  }
  return anticommuting_sites % 2 == 0;
}

double commutator_frob_norm(const HamiltonianTerm& a, const HamiltonianTerm& b) {
  if (a.pauli.n_qubits() != b.pauli.n_qubits())
    throw shape_error("commutator_frob_norm: mismatched qubit counts");
  const double ca = std::abs(a.coeff), cb = std::abs(b.coeff);
  if (ca == 0.0 || cb == 0.0) return 0.0;
  if (commutes(a.pauli, b.pauli)) return 0.0;
  // ‖[A,B]‖_F = ‖2AB‖_F for anticommuting Paulis; ‖P‖_F = 2^{n/2}.
  const int n = a.pauli.n_qubits();
  return 2.0 * ca * cb * std::pow(2.0, 0.5 * n);
}

Hamiltonian::Hamiltonian(int n_qubits, std::vector<HamiltonianTerm> terms)
    : n_qubits_(n_qubits) {
  if (n_qubits < 1) throw validation_error("Hamiltonian: n_qubits must be positive");
  if (n_qubits > kMaxQubits)
    throw size_limit_error("Hamiltonian: n_qubits exceeds dense limit of 12");

  std::map<PauliString, cplx> merged;
  for (auto& t : terms) {
    if (t.pauli.n_qubits() != n_qubits)
      throw shape_error("Hamiltonian: term qubit count mismatch");
    if (!std::isfinite(t.coeff.real()) || !std::isfinite(t.coeff.imag()))
      throw validation_error("Hamiltonian: non-finite coefficient");
    merged[t.pauli] += t.coeff;
  }
  for (auto& [p, c] : merged) {
    if (std::abs(c) < 1e-15) continue;  // cancelled duplicates
    if (std::abs(c.imag()) > 1e-12)
      throw validation_error("Hamiltonian: imaginary coefficient on Hermitian Pauli term");
    terms_.emplace_back(cplx(c.real(), 0.0), p);
  }
}

Hamiltonian Hamiltonian::without_term(std::size_t i) const {
  std::vector<HamiltonianTerm> rest;
  rest.reserve(terms_.size() - 1);
  for (std::size_t j = 0; j < terms_.size(); ++j)
    if (j != i) rest.push_back(terms_[j]);
  return Hamiltonian(n_qubits_, std::move(rest));
}

bool Hamiltonian::operator==(const Hamiltonian& other) const {
  if (n_qubits_ != other.n_qubits_ || terms_.size() != other.terms_.size()) return false;
  for (std::size_t i = 0; i < terms_.size(); ++i) {
    if (!(terms_[i].pauli == other.terms_[i].pauli)) return false;
    if (terms_[i].coeff != other.terms_[i].coeff) return false;
  }
  return true;
}

}  // namespace hmae
