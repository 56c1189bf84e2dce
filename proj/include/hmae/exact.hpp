#pragma once

#include <Eigen/Dense>
#include <set>
#include <utility>

#include "hmae/pauli.hpp"

namespace hmae {

using Eigen::MatrixXcd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

struct domain_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct convergence_error : std::runtime_error {
  double best_lambda_min, best_lambda_max;
  convergence_error(const std::string& msg, double lo, double hi)
      : std::runtime_error(msg), best_lambda_min(lo), best_lambda_max(hi) {}
};

/// 2^k x 2^k density operator. validate() enforces Hermiticity, unit trace
/// and spectral positivity up to roundoff.
struct DensityMatrix {
  MatrixXcd entries;

  Eigen::Index dim() const { return entries.rows(); }
  void validate(double tol = 1e-10) const;
};

struct SpectralDecomposition {
  VectorXd eigenvalues;   // ascending
  MatrixXcd eigenvectors; // column k pairs with eigenvalue k
};

// Basis convention: site 0 is the most significant bit of the basis index,
// matching kron(op_0, op_1, ..., op_{n-1}).

MatrixXcd pauli_matrix(Pauli p);
MatrixXcd to_dense(const PauliString& p);
MatrixXcd to_dense(const Hamiltonian& h);

/// y = c P x without materializing the dense term.
void apply_term(const HamiltonianTerm& term, const VectorXcd& x, VectorXcd& y_accum);
VectorXcd apply_hamiltonian(const Hamiltonian& h, const VectorXcd& x);

SpectralDecomposition diagonalize(const MatrixXcd& hermitian);

struct GroundState {
  double energy;
  VectorXcd state;
  bool degenerate;  // gap to the next level < 1e-10
};
GroundState ground_state(const Hamiltonian& h);

/// rho_beta = e^{-beta H} / Tr(e^{-beta H}), via the spectral decomposition
/// with a max-eigenvalue shift.
DensityMatrix thermal_state(const Hamiltonian& h, double beta);

DensityMatrix partial_trace(const DensityMatrix& rho, const std::set<int>& keep, int n_qubits);

/// S(rho) = -Tr(rho ln rho) in nats.
double von_neumann_entropy(const DensityMatrix& rho);

struct SitePartition {
  std::set<int> visible;
  std::set<int> masked;
};

/// I_Q(V:M) = S(rho_V) + S(rho_M) - S(rho_VM) on the thermal state.
double qmi(const Hamiltonian& h, const SitePartition& partition, double beta);

/// Bridge from a masked-term set to a site bipartition: a site goes to M iff
/// the masked coefficient weight on it exceeds the visible weight; an empty
/// side is repaired by moving the site with the largest margin.
SitePartition term_partition_to_site_partition(const Hamiltonian& h,
                                               const std::set<std::size_t>& masked_terms);

/// Matrix-free power iteration for (lambda_min, lambda_max).
std::pair<double, double> extremal_eigenvalues_power(const Hamiltonian& h,
                                                     double tol = 1e-6,
                                                     int max_iter = 10000);

/// E0 = max(|lambda_max - lambda_min|, gap); always > 0 for a nonzero H.
double characteristic_energy_scale(const Hamiltonian& h);
double energy_gap(const Hamiltonian& h);

struct CorrelationLength {
  double xi;
  bool degenerate_fit;
};

/// Exponential fit of ground-state connected Z_0 Z_r correlators.
CorrelationLength correlation_length(const Hamiltonian& h);

/// Entropy of the reduced state on sites {0..floor(n/2)-1} of a pure state.
double entanglement_entropy_halfchain(const VectorXcd& state, int n_qubits);

}  // namespace hmae
