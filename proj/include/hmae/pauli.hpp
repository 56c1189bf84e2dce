#pragma once

#include <complex>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace hmae {

using cplx = std::complex<double>;

struct validation_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct size_limit_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct shape_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Pauli : std::uint8_t { I = 0, X = 1, Y = 2, Z = 3 };

char pauli_char(Pauli p);
Pauli pauli_from_char(char c);

/// Tensor product of single-qubit operators from {I, X, Y, Z}.
class PauliString {
public:
  PauliString() = default;
  explicit PauliString(std::vector<Pauli> ops) : ops_(std::move(ops)) {}
  /// Parse from a letter string like "XZII".
  static PauliString parse(const std::string& letters);
  /// Identity string on n qubits.
  static PauliString identity(int n_qubits) {
    return PauliString(std::vector<Pauli>(static_cast<std::size_t>(n_qubits), Pauli::I));
  }

  int n_qubits() const { return static_cast<int>(ops_.size()); }
  Pauli op(int site) const { return ops_[static_cast<std::size_t>(site)]; }
  const std::vector<Pauli>& ops() const { return ops_; }

  /// Sites with a non-identity operator.
  std::set<int> support() const;
  int weight() const;

  std::string to_string() const;

  bool operator==(const PauliString& other) const { return ops_ == other.ops_; }
  bool operator<(const PauliString& other) const { return ops_ < other.ops_; }

private:
  std::vector<Pauli> ops_;
};

/// True iff the two strings commute. Any Pauli pair either commutes or
/// anticommutes; they anticommute iff the number of sites where both act
/// non-trivially with different operators is odd.
bool commutes(const PauliString& a, const PauliString& b);

struct HamiltonianTerm {
  cplx coeff{};
  PauliString pauli;

  HamiltonianTerm() = default;
  HamiltonianTerm(cplx c, PauliString p) : coeff(c), pauli(std::move(p)) {}
};

/// ‖[c_i P_i, c_j P_j]‖_F without densifying: commuting strings give 0,
/// anticommuting pairs give 2·|c_i|·|c_j|·2^{n/2}.
double commutator_frob_norm(const HamiltonianTerm& a, const HamiltonianTerm& b);

/// Weighted sum of Pauli strings on n qubits. Terms are merged and kept in
/// lexicographic order on the operator sequence, so equal Hamiltonians
/// serialize identically.
class Hamiltonian {
public:
  Hamiltonian() = default;
  /// Validates, merges duplicate strings, drops negligible terms, sorts
  /// canonically, and checks that surviving coefficients are real.
  Hamiltonian(int n_qubits, std::vector<HamiltonianTerm> terms);

  int n_qubits() const { return n_qubits_; }
  const std::vector<HamiltonianTerm>& terms() const { return terms_; }
  std::size_t n_terms() const { return terms_.size(); }
  const HamiltonianTerm& term(std::size_t i) const { return terms_[i]; }

  /// Copy with term i removed (for leave-one-out saliency scans).
  Hamiltonian without_term(std::size_t i) const;

  bool operator==(const Hamiltonian& other) const;

  static constexpr int kMaxQubits = 12;

private:
  int n_qubits_ = 0;
  std::vector<HamiltonianTerm> terms_;
};

}  // namespace hmae
