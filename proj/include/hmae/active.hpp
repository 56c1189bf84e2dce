#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "hmae/model.hpp"

namespace hmae {

enum class Acquisition {
  PredictiveEntropy,
  EnsembleDisagreement,
  PhaseBoundaryMargin,
  EmbeddingDistance,
  Random,  // seeded-uniform control arm
};

std::string acquisition_name(Acquisition a);
Acquisition acquisition_from_name(const std::string& name);

/// Scores one pool of frozen embeddings; higher = more desirable to label.
/// `ensemble` holds the working classifier head first; disagreement uses all
/// of them. EmbeddingDistance ignores the heads, Random ignores everything
/// but the seed.
Eigen::VectorXd score_pool(const Eigen::MatrixXd& pool_z, const Eigen::MatrixXd& labeled_z,
                           const std::vector<ClassifierHead>& ensemble, Acquisition kind,
                           std::uint64_t seed);

struct CalibrationResult {
  double temperature = 1.0;
  double nll_before = 0.0;
  double nll_after = 0.0;
  double ece_before = 0.0;
  double ece_after = 0.0;
};

/// Temperature scaling by golden-section search of validation NLL on
/// [0.05, 20]. Falls back to T = 1 in the rare case the NLL optimum would
/// worsen the ECE, so calibration never degrades it.
CalibrationResult calibrate_temperature(const Eigen::MatrixXd& logits,
                                        const std::vector<int>& labels, int bins = 10);

struct ActiveLoopConfig {
  Acquisition kind = Acquisition::PredictiveEntropy;
  int ensemble_size = 5;
  int batch_k = 10;
  int budget = 100;
  int n_classes = 2;
  std::uint64_t seed = 0;
};

struct ActiveRound {
  int round = 0;
  int labels_used = 0;
  std::string acquisition;
  double accuracy = 0.0;
  double mae = 0.0;
  double ece = 0.0;
};

struct ActiveResult {
  std::vector<ActiveRound> rounds;        // baseline row + one per acquisition round
  std::vector<std::size_t> labeled;       // final labeled ids, acquisition order
};

/// Pool-based loop against precomputed oracle labels (exact-diagonalization
/// phases and energies). Items are addressed by row index into pool_z; score
/// ties break by ascending index. The head (plus a ridge regressor for the
/// energy MAE column) is retrained from scratch each round on the labeled set.
ActiveResult active_loop(const Eigen::MatrixXd& pool_z, const std::vector<int>& pool_phase,
                         const Eigen::VectorXd& pool_energy, const Eigen::MatrixXd& test_z,
                         const std::vector<int>& test_phase, const Eigen::VectorXd& test_energy,
                         const std::vector<std::size_t>& seed_set,
                         const ActiveLoopConfig& cfg);

void write_active_csv(const std::vector<ActiveRound>& rounds, const std::string& path);

}  // namespace hmae
