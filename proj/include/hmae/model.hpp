#pragma once

#include <Eigen/Dense>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "hmae/autograd.hpp"
#include "hmae/hamgen.hpp"
#include "hmae/saliency.hpp"
#include "hmae/tokenizer.hpp"

namespace hmae {

struct numerical_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct format_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int token_dim = 0;   // from the tokenizer
  int n_sites = 0;     // trailing feature columns holding the sites bitmap
  int decoder_layers = 2;
  double dropout = 0.1;
  int max_seq_len = 64;
  int max_sites = 12;

  void validate() const;
};

struct TrainConfig {
  double lr = 1e-4;
  int batch_size = 8;
  double weight_decay = 1e-5;
  double clip_norm = 1.0;
  double warmup_frac = 0.05;
  int total_steps = 100;
  Eigen::Vector3d lambda{0.6, 0.3, 0.1};  // (rec, energy, corr)
  double eps_norm = 1e-6;
  bool normalized_reconstruction = true;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Encoder-decoder over token feature rows. All activations are row-major
/// sequences: k tokens x d_model.
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  std::uint64_t init_seed() const { return init_seed_; }
  std::map<std::string, ag::Var>& params() { return params_; }
  const std::map<std::string, ag::Var>& params() const { return params_; }

  void zero_grad();

  /// Input projection of token features plus positional encoding. Masked rows
  /// have their projected features replaced by the mask embedding; the
  /// positional encoding (per-index embedding + summed per-site embeddings
  /// from the sites bitmap) is applied to every row.
  ag::Var embed(const Eigen::MatrixXd& features, const std::set<std::size_t>& masked) const;

  /// Pre-norm transformer encoder stack.
  ag::Var encode(const ag::Var& x) const;

  /// 1 x d_model mean over positions.
  ag::Var pool(const ag::Var& latent) const;

  /// Shallow decoder stack plus linear head to token_dim.
  ag::Var decode_reconstruct(const ag::Var& latent) const;

  ag::Var energy_head(const ag::Var& pooled) const;  // 1x1
  ag::Var corr_head(const ag::Var& pooled) const;    // 1x1

  /// Frozen-encoder feature for fine-tuning heads: no masking, values only.
  Eigen::RowVectorXd pooled_embedding(const Eigen::MatrixXd& features) const;

 private:
  ag::Var block(const ag::Var& x, const std::string& prefix) const;
  ag::Var p(const std::string& name) const;

  ModelConfig cfg_;
  std::uint64_t init_seed_ = 0;
  std::map<std::string, ag::Var> params_;
};

/// Squared token errors summed per row, averaged over masked rows only; the
/// normalized variant divides each masked row by (|c_i| + eps_norm).
ag::Var loss_reconstruction(const ag::Var& pred, const Eigen::MatrixXd& target,
                            const std::set<std::size_t>& masked,
                            const Eigen::VectorXd& magnitudes, bool normalized,
                            double eps_norm);

struct AdamState {
  std::map<std::string, Eigen::MatrixXd> m;
  std::map<std::string, Eigen::MatrixXd> v;
  int step = 0;
};

/// Schedule: linear warmup over warmup_frac of total_steps, then cosine decay
/// to zero.
double lr_at(const TrainConfig& tc, int step);

/// Scales all gradients so their global norm is at most max_norm. Returns the
/// pre-clip norm.
double clip_global_norm(std::map<std::string, ag::Var>& params, double max_norm);

/// AdamW update with decoupled weight decay; parameters and moments are
/// rounded through float32 afterwards so checkpoint resume is bit-exact.
void adamw_step(Model& model, AdamState& st, const TrainConfig& tc);

struct PretrainExample {
  TokenSequence seq;
  Eigen::MatrixXd features;
  Eigen::VectorXd magnitudes;
  Hamiltonian hamiltonian;
  double energy_per_qubit = 0.0;
  double xi_per_qubit = 0.0;
};

PretrainExample make_pretrain_example(const DatasetRecord& rec, const TokenizerConfig& tok);

struct PretrainMetricsRow {
  int step = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_rec = 0.0;
  double loss_energy = 0.0;
  double loss_corr = 0.0;
};

/// One optimization step: deterministic batch + fresh masking plans, combined
/// loss, backward, clipped AdamW update.
PretrainMetricsRow pretrain_step(Model& model, AdamState& adam,
                                 const std::vector<PretrainExample>& corpus,
                                 const SaliencyStrategy& strategy, const TrainConfig& tc);

/// Runs steps adam.step .. total_steps. Throws numerical_error on NaN loss.
std::vector<PretrainMetricsRow> pretrain(Model& model, AdamState& adam,
                                         const std::vector<PretrainExample>& corpus,
                                         const SaliencyStrategy& strategy,
                                         const TrainConfig& tc);

void write_metrics_csv(const std::vector<PretrainMetricsRow>& rows, const std::string& path);

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  std::uint64_t init_seed = 0;
  int step = 0;
  std::map<std::string, Eigen::MatrixXd> tensors;  // params + "opt.m."/"opt.v." moments
};

Checkpoint make_checkpoint(const Model& model, const AdamState& adam, const TrainConfig& tc);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);
Model restore_model(const Checkpoint& ckpt);
AdamState restore_adam(const Checkpoint& ckpt);

struct ClassifierHead {
  Eigen::MatrixXd w;     // d x classes
  Eigen::RowVectorXd b;  // 1 x classes
  double temperature = 1.0;

  Eigen::RowVectorXd logits(const Eigen::RowVectorXd& z) const;
  Eigen::RowVectorXd probabilities(const Eigen::RowVectorXd& z) const;
  int predict(const Eigen::RowVectorXd& z) const;
};

/// Full-batch cross-entropy training of a softmax head on frozen embeddings.
/// At most max_steps adaptive-moment updates; early stop when the training
/// loss plateaus (patience 50, tol 1e-6). Rejects single-class label sets.
ClassifierHead finetune_classifier(const Eigen::MatrixXd& z, const std::vector<int>& labels,
                                   int n_classes, std::uint64_t seed, int max_steps = 500);

struct RegressorHead {
  Eigen::VectorXd w;
  double b = 0.0;

  double predict(const Eigen::RowVectorXd& z) const;
};

/// Closed-form ridge regression on frozen embeddings.
RegressorHead finetune_regressor(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                                 double ridge = 1e-3);

}  // namespace hmae
