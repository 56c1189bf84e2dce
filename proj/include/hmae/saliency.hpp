#pragma once

#include <Eigen/Dense>
#include <set>

#include "hmae/exact.hpp"
#include "hmae/pauli.hpp"

namespace hmae {

enum class StrategyKind {
  Random,
  EnergyOnly,
  BaseMultiplicative,
  ConvexPractical,
  Enhanced,
  QuantumQ,
  QuantumExtended,
  DimensionallyConsistent,
};

std::string strategy_name(StrategyKind k);
StrategyKind strategy_from_name(const std::string& name);

struct SaliencyStrategy {
  StrategyKind kind = StrategyKind::BaseMultiplicative;
  double alpha_temperature = 2.0;  // masking softmax sharpness
  double mask_ratio = 0.5;
  Eigen::Vector3d weights{0.1, 0.8, 0.1};  // Enhanced (w1, w2, w3), normalized on use
  double alpha_mix = 0.65;                 // ConvexPractical energy/structure balance
  double beta_thermal = 1.0;               // quantum strategies, in units of 1/E0
  double k_b_t = -1.0;                     // <0 means "default to E0"
  bool corrected_quantum = false;          // substitute |c_i|/|c|_max for the vanishing
                                           // self term of the quantum score
  bool inverted_prefactor = false;            // use the E0/(k_B T) prefactor variant

  void validate(std::size_t n_tokens) const;
};

struct MaskingPlan {
  Eigen::VectorXd probabilities;  // simplex over tokens
  std::set<std::size_t> masked;
  std::uint64_t seed = 0;
};

double jaccard_overlap(const std::set<int>& a, const std::set<int>& b);

/// Adjacency weight: Jaccard * exp(-||comm||_F), zero diagonal.
Eigen::MatrixXd adjacency(const Hamiltonian& h);

/// Normalized variant: Jaccard * softmax over site-overlapping neighbors of
/// exp(-beta ||comm||_F). Rows with no neighbors are zero.
Eigen::MatrixXd adjacency_normalized(const Hamiltonian& h, double beta_thermal);

/// s_i = |c_i| (1 + sum_j A_ij)
Eigen::VectorXd base_saliency(const Hamiltonian& h);

/// g_ij = Tr(rho [h_i, h_j]^dag [h_i, h_j]) with bare Pauli strings, dense.
double qfim_element(const DensityMatrix& rho, const HamiltonianTerm& t_i,
                    const HamiltonianTerm& t_j);

/// Q(h_i) = |c_i| sqrt(g_ii) + sum_{j != i} |c_j| sqrt(g_ij). The self term
/// vanishes identically; with corrected=true it is replaced by |c_i|/|c|_max.
Eigen::VectorXd quantum_saliency(const Hamiltonian& h, double beta, bool corrected = false);

/// S(h_i) = alpha |c_i|/|c|_max + (1 - alpha) sum_j A~_ij
Eigen::VectorXd practical_saliency(const Hamiltonian& h, double alpha_mix,
                                   double beta_thermal = 1.0);

/// s_enhanced = s * (w1 S(H_i) + w2 E_frac + w3 F_i), each factor min-max
/// normalized across terms. Expectations are taken in `state`.
Eigen::VectorXd enhanced_saliency(const Hamiltonian& h, const Eigen::Vector3d& weights,
                                  const DensityMatrix& state);

/// Q_ext = Q + alpha_T |S_half(gs(H)) - S_half(gs(H - c_i h_i))| with
/// alpha_T = E0 / (E0 + k_B T).
Eigen::VectorXd extended_saliency(const Hamiltonian& h, double beta, double k_b_t);

/// Q_dim = (|c_i|/E0)(1 + (k_B T / E0) sum_j A~_ij); k_b_t < 0 defaults to E0.
/// inverted_prefactor selects the E0/(k_B T) reading instead.
Eigen::VectorXd dimensional_saliency(const Hamiltonian& h, double k_b_t,
                                     bool inverted_prefactor = false);

/// softmax(alpha * s) with max shift.
Eigen::VectorXd masking_probabilities(const Eigen::VectorXd& saliency,
                                      double alpha_temperature);

/// Draws round(ratio * k) indices (clamped to [1, k-1]) sequentially without
/// replacement, renormalizing after each draw.
MaskingPlan sample_mask(const Eigen::VectorXd& probabilities, double mask_ratio,
                        std::uint64_t seed);

/// Strategy dispatch: scores for one Hamiltonian (Random gives a zero vector,
/// i.e. uniform masking probabilities).
Eigen::VectorXd compute_saliency(const Hamiltonian& h, const SaliencyStrategy& strategy);

MaskingPlan make_masking_plan(const Hamiltonian& h, const SaliencyStrategy& strategy,
                              std::uint64_t seed);

}  // namespace hmae
