#include "hmae/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <iomanip>
#include <sstream>

#include "hmae/rng.hpp"
#include "json.hpp"

namespace hmae {

using ag::Var;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

void ModelConfig::validate() const {
  if (d_model <= 0 || n_layers < 0 || decoder_layers < 0 || n_heads <= 0)
    throw config_error("model config: sizes must be positive");
  if (d_model % n_heads != 0)
    throw config_error("model config: d_model must be divisible by n_heads");
  if (token_dim <= 0) throw config_error("model config: token_dim not set");
  if (n_sites <= 0 || n_sites > token_dim)
    throw config_error("model config: n_sites out of range");
  if (max_seq_len <= 0 || max_sites <= 0 || n_sites > max_sites)
    throw config_error("model config: sequence/site capacity out of range");
  if (dropout < 0.0 || dropout >= 1.0) throw config_error("model config: dropout in [0,1)");
}

void TrainConfig::validate() const {
  if (lr <= 0.0) throw config_error("train config: lr must be > 0");
  if (batch_size <= 0 || total_steps <= 0)
    throw config_error("train config: batch size and steps must be > 0");
  if (std::abs(lambda.sum() - 1.0) > 1e-9)
    throw config_error("train config: loss weights must sum to 1");
  if (lambda.minCoeff() < 0.0) throw config_error("train config: loss weights must be >= 0");
  if (clip_norm <= 0.0 || eps_norm < 0.0 || warmup_frac < 0.0 || warmup_frac >= 1.0)
    throw config_error("train config: invalid clip/eps/warmup");
}

namespace {

MatrixXd xavier(Rng& rng, int rows, int cols) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = (2.0 * rng.uniform() - 1.0) * limit;
  return m;
}

MatrixXd small_gaussian(Rng& rng, int rows, int cols, double s = 0.02) {
  MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = s * rng.gaussian();
  return m;
}

void init_block(std::map<std::string, Var>& params, Rng& rng, const std::string& prefix,
                int d) {
  const int dff = 4 * d;
  params[prefix + "attn.wq"] = ag::parameter(xavier(rng, d, d));
  params[prefix + "attn.wk"] = ag::parameter(xavier(rng, d, d));
  params[prefix + "attn.wv"] = ag::parameter(xavier(rng, d, d));
  params[prefix + "attn.wo"] = ag::parameter(xavier(rng, d, d));
  params[prefix + "ln1.g"] = ag::parameter(MatrixXd::Ones(1, d));
  params[prefix + "ln1.b"] = ag::parameter(MatrixXd::Zero(1, d));
  params[prefix + "ln2.g"] = ag::parameter(MatrixXd::Ones(1, d));
  params[prefix + "ln2.b"] = ag::parameter(MatrixXd::Zero(1, d));
  params[prefix + "ff.w1"] = ag::parameter(xavier(rng, d, dff));
  params[prefix + "ff.b1"] = ag::parameter(MatrixXd::Zero(1, dff));
  params[prefix + "ff.w2"] = ag::parameter(xavier(rng, dff, d));
  params[prefix + "ff.b2"] = ag::parameter(MatrixXd::Zero(1, d));
}

}  // namespace

Model::Model(ModelConfig cfg, std::uint64_t init_seed)
    : cfg_(cfg), init_seed_(init_seed) {
  cfg_.validate();
  Rng rng(seed_mix(init_seed, 0x6d6f64656cULL));
  const int d = cfg_.d_model;
  params_["embed.win"] = ag::parameter(xavier(rng, cfg_.token_dim, d));
  params_["embed.mask"] = ag::parameter(small_gaussian(rng, 1, d));
  params_["embed.pos"] = ag::parameter(small_gaussian(rng, cfg_.max_seq_len, d));
  params_["embed.site"] = ag::parameter(small_gaussian(rng, cfg_.max_sites, d));
  for (int l = 0; l < cfg_.n_layers; ++l)
    init_block(params_, rng, "enc" + std::to_string(l) + ".", d);
  for (int l = 0; l < cfg_.decoder_layers; ++l)
    init_block(params_, rng, "dec" + std::to_string(l) + ".", d);
  params_["dec.head.w"] = ag::parameter(xavier(rng, d, cfg_.token_dim));
  params_["dec.head.b"] = ag::parameter(MatrixXd::Zero(1, cfg_.token_dim));
  params_["head_energy.w"] = ag::parameter(xavier(rng, d, 1));
  params_["head_energy.b"] = ag::parameter(MatrixXd::Zero(1, 1));
  params_["head_corr.w"] = ag::parameter(xavier(rng, d, 1));
  params_["head_corr.b"] = ag::parameter(MatrixXd::Zero(1, 1));
  // keep parameters on the float32 grid so checkpoints and resumed runs are
  // bit-exact
  for (auto& [name, p] : params_)
    p->value = p->value.unaryExpr(
        [](double x) { return static_cast<double>(static_cast<float>(x)); });
}

void Model::zero_grad() {
  for (auto& [name, p] : params_) p->grad.setZero();
}

Var Model::p(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw config_error("unknown parameter " + name);
  return it->second;
}

Var Model::embed(const MatrixXd& features, const std::set<std::size_t>& masked) const {
  const Eigen::Index k = features.rows();
  if (features.cols() != cfg_.token_dim) throw shape_error("embed: token_dim mismatch");
  if (k > cfg_.max_seq_len) throw shape_error("embed: sequence longer than max_seq_len");
  for (std::size_t i : masked)
    if (i >= static_cast<std::size_t>(k)) throw shape_error("embed: masked index out of range");

  MatrixXd visible = features;
  MatrixXd mask_ind = MatrixXd::Zero(k, 1);
  for (std::size_t i : masked) {
    visible.row(static_cast<Eigen::Index>(i)).setZero();
    mask_ind(static_cast<Eigen::Index>(i), 0) = 1.0;
  }
  // sites bitmap doubles as structural position information and is kept for
  // masked rows as part of the positional encoding
  MatrixXd site_sel = MatrixXd::Zero(k, cfg_.n_sites);
  site_sel = features.rightCols(cfg_.n_sites);

  Var out = ag::matmul(ag::constant(std::move(visible)), p("embed.win"));
  out = ag::add(out, ag::matmul(ag::constant(std::move(mask_ind)), p("embed.mask")));
  out = ag::add(out, ag::row_block(p("embed.pos"), 0, k));
  out = ag::add(out, ag::matmul(ag::constant(std::move(site_sel)),
                                ag::row_block(p("embed.site"), 0, cfg_.n_sites)));
  return out;
}

Var Model::block(const Var& x, const std::string& prefix) const {
  const int d = cfg_.d_model;
  const int dh = d / cfg_.n_heads;
  Var h1 = ag::add_row_broadcast(
      ag::mul_row_broadcast(ag::layer_norm_rows(x), p(prefix + "ln1.g")),
      p(prefix + "ln1.b"));
  Var q = ag::matmul(h1, p(prefix + "attn.wq"));
  Var kk = ag::matmul(h1, p(prefix + "attn.wk"));
  Var v = ag::matmul(h1, p(prefix + "attn.wv"));
  std::vector<Var> heads;
  for (int h = 0; h < cfg_.n_heads; ++h) {
    Var qh = ag::col_block(q, h * dh, dh);
    Var kh = ag::col_block(kk, h * dh, dh);
    Var vh = ag::col_block(v, h * dh, dh);
    Var a = ag::softmax_rows(
        ag::scale(ag::matmul(qh, ag::transpose(kh)), 1.0 / std::sqrt(double(dh))));
    heads.push_back(ag::matmul(a, vh));
  }
  Var attn = ag::matmul(ag::hconcat(heads), p(prefix + "attn.wo"));
  Var r1 = ag::add(x, attn);
  Var h2 = ag::add_row_broadcast(
      ag::mul_row_broadcast(ag::layer_norm_rows(r1), p(prefix + "ln2.g")),
      p(prefix + "ln2.b"));
  Var ff = ag::add_row_broadcast(
      ag::matmul(ag::relu(ag::add_row_broadcast(ag::matmul(h2, p(prefix + "ff.w1")),
                                                p(prefix + "ff.b1"))),
                 p(prefix + "ff.w2")),
      p(prefix + "ff.b2"));
  return ag::add(r1, ff);
}

Var Model::encode(const Var& x) const {
  Var h = x;
  for (int l = 0; l < cfg_.n_layers; ++l) h = block(h, "enc" + std::to_string(l) + ".");
  return h;
}

Var Model::pool(const Var& latent) const { return ag::mean_rows(latent); }

Var Model::decode_reconstruct(const Var& latent) const {
  Var h = latent;
  for (int l = 0; l < cfg_.decoder_layers; ++l)
    h = block(h, "dec" + std::to_string(l) + ".");
  return ag::add_row_broadcast(ag::matmul(h, p("dec.head.w")), p("dec.head.b"));
}

Var Model::energy_head(const Var& pooled) const {
  return ag::add(ag::matmul(pooled, p("head_energy.w")), p("head_energy.b"));
}

Var Model::corr_head(const Var& pooled) const {
  return ag::add(ag::matmul(pooled, p("head_corr.w")), p("head_corr.b"));
}

RowVectorXd Model::pooled_embedding(const MatrixXd& features) const {
  Var z = pool(encode(embed(features, {})));
  return z->value.row(0);
}

Var loss_reconstruction(const Var& pred, const MatrixXd& target,
                        const std::set<std::size_t>& masked, const VectorXd& magnitudes,
                        bool normalized, double eps_norm) {
  if (masked.empty()) throw shape_error("loss_reconstruction: empty masked set");
  VectorXd weights = VectorXd::Zero(pred->value.rows());
  const double inv_m = 1.0 / static_cast<double>(masked.size());
  for (std::size_t i : masked) {
    const auto idx = static_cast<Eigen::Index>(i);
    double w = inv_m;
    if (normalized) w /= magnitudes(idx) + eps_norm;
    weights(idx) = w;
  }
  return ag::weighted_row_sse(pred, target, weights);
}

double lr_at(const TrainConfig& tc, int step) {
  const int warmup = std::max(1, static_cast<int>(std::lround(tc.warmup_frac * tc.total_steps)));
  if (step < warmup) return tc.lr * static_cast<double>(step + 1) / warmup;
  const int decay_span = std::max(1, tc.total_steps - warmup);
  const double t = static_cast<double>(step - warmup) / decay_span;
  return tc.lr * 0.5 * (1.0 + std::cos(M_PI * std::min(1.0, t)));
}

double clip_global_norm(std::map<std::string, Var>& params, double max_norm) {
  double sq = 0.0;
  for (auto& [name, p] : params) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& [name, p] : params) p->grad *= s;
  }
  return norm;
}

namespace {

void round_f32(MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      m(i, j) = static_cast<double>(static_cast<float>(m(i, j)));
}

}  // namespace

void adamw_step(Model& model, AdamState& st, const TrainConfig& tc) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  const double lr = lr_at(tc, st.step);
  const int t = st.step + 1;
  const double bc1 = 1.0 - std::pow(beta1, t);
  const double bc2 = 1.0 - std::pow(beta2, t);
  for (auto& [name, p] : model.params()) {
    MatrixXd& m = st.m.try_emplace(name, MatrixXd::Zero(p->value.rows(), p->value.cols()))
                      .first->second;
    MatrixXd& v = st.v.try_emplace(name, MatrixXd::Zero(p->value.rows(), p->value.cols()))
                      .first->second;
    m = beta1 * m + (1.0 - beta1) * p->grad;
    v = beta2 * v + (1.0 - beta2) * p->grad.cwiseProduct(p->grad);
    const MatrixXd mhat = m / bc1;
    const MatrixXd vhat = v / bc2;
    p->value -= lr * (mhat.array() / (vhat.array().sqrt() + eps)).matrix();
    p->value -= lr * tc.weight_decay * p->value;
    round_f32(p->value);
    round_f32(m);
    round_f32(v);
  }
  st.step = t;
}

PretrainExample make_pretrain_example(const DatasetRecord& rec, const TokenizerConfig& tok) {
  PretrainExample ex;
  ex.seq = tokenize(rec.hamiltonian, tok);
  ex.features = token_features(ex.seq, tok);
  ex.magnitudes.resize(static_cast<Eigen::Index>(ex.seq.size()));
  for (std::size_t i = 0; i < ex.seq.size(); ++i)
    ex.magnitudes(static_cast<Eigen::Index>(i)) = ex.seq.tokens[i].magnitude;
  ex.hamiltonian = rec.hamiltonian;
  ex.energy_per_qubit = rec.labels.energy_per_qubit;
  ex.xi_per_qubit = rec.labels.correlation_length / rec.hamiltonian.n_qubits();
  return ex;
}

PretrainMetricsRow pretrain_step(Model& model, AdamState& adam,
                                 const std::vector<PretrainExample>& corpus,
                                 const SaliencyStrategy& strategy, const TrainConfig& tc) {
  if (corpus.empty()) throw config_error("pretrain: empty corpus");
  const int step = adam.step;
  Rng batch_rng(seed_mix(tc.seed, static_cast<std::uint64_t>(step)));
  Var rec_sum, en_sum, corr_sum;
  for (int b = 0; b < tc.batch_size; ++b) {
    const auto& ex = corpus[batch_rng.below(corpus.size())];
    MaskingPlan plan = make_masking_plan(
        ex.hamiltonian, strategy,
        seed_mix(tc.seed, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(b)));
    Var emb = model.embed(ex.features, plan.masked);
    if (model.config().dropout > 0.0) {
      Rng drop_rng(seed_mix(tc.seed, static_cast<std::uint64_t>(step),
                            0x64726f70ULL + static_cast<std::uint64_t>(b)));
      const double keep = 1.0 - model.config().dropout;
      MatrixXd mask(emb->value.rows(), emb->value.cols());
      for (Eigen::Index i = 0; i < mask.rows(); ++i)
        for (Eigen::Index j = 0; j < mask.cols(); ++j)
          mask(i, j) = drop_rng.uniform() < keep ? 1.0 / keep : 0.0;
      emb = ag::cwise_mul_const(emb, mask);
    }
    Var latent = model.encode(emb);
    Var pred = model.decode_reconstruct(latent);
    Var rec = loss_reconstruction(pred, ex.features, plan.masked, ex.magnitudes,
                                  tc.normalized_reconstruction, tc.eps_norm);
    Var pooled = model.pool(latent);
    MatrixXd e_target(1, 1), c_target(1, 1);
    e_target(0, 0) = ex.energy_per_qubit;
    c_target(0, 0) = ex.xi_per_qubit;
    Var en = ag::mse(model.energy_head(pooled), e_target);
    Var corr = ag::mse(model.corr_head(pooled), c_target);
    rec_sum = rec_sum ? ag::add(rec_sum, rec) : rec;
    en_sum = en_sum ? ag::add(en_sum, en) : en;
    corr_sum = corr_sum ? ag::add(corr_sum, corr) : corr;
  }
  const double inv_b = 1.0 / tc.batch_size;
  rec_sum = ag::scale(rec_sum, inv_b);
  en_sum = ag::scale(en_sum, inv_b);
  corr_sum = ag::scale(corr_sum, inv_b);
  Var total = ag::add(ag::add(ag::scale(rec_sum, tc.lambda(0)), ag::scale(en_sum, tc.lambda(1))),
                      ag::scale(corr_sum, tc.lambda(2)));

  PretrainMetricsRow row;
  row.step = step;
  row.lr = lr_at(tc, step);
  row.loss_total = total->value(0, 0);
  row.loss_rec = rec_sum->value(0, 0);
  row.loss_energy = en_sum->value(0, 0);
  row.loss_corr = corr_sum->value(0, 0);
  if (!std::isfinite(row.loss_total)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << step << ": total=" << row.loss_total
        << " rec=" << row.loss_rec << " energy=" << row.loss_energy
        << " corr=" << row.loss_corr;
    throw numerical_error(msg.str());
  }
  model.zero_grad();
  ag::backward(total);
  clip_global_norm(model.params(), tc.clip_norm);
  adamw_step(model, adam, tc);
  return row;
}

std::vector<PretrainMetricsRow> pretrain(Model& model, AdamState& adam,
                                         const std::vector<PretrainExample>& corpus,
                                         const SaliencyStrategy& strategy,
                                         const TrainConfig& tc) {
  tc.validate();
  std::vector<PretrainMetricsRow> log;
  log.reserve(static_cast<std::size_t>(std::max(0, tc.total_steps - adam.step)));
  while (adam.step < tc.total_steps)
    log.push_back(pretrain_step(model, adam, corpus, strategy, tc));
  return log;
}

void write_metrics_csv(const std::vector<PretrainMetricsRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open " + path);
  out << "step,lr,loss_total,loss_rec,loss_energy,loss_corr\n";
  out << std::setprecision(17);
  for (const auto& r : rows)
    out << r.step << ',' << r.lr << ',' << r.loss_total << ',' << r.loss_rec << ','
        << r.loss_energy << ',' << r.loss_corr << '\n';
  if (!out) throw io_error("write failed for " + path);
}

namespace {

nlohmann::json model_config_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},       {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},       {"token_dim", c.token_dim},
          {"n_sites", c.n_sites},       {"decoder_layers", c.decoder_layers},
          {"dropout", c.dropout},       {"max_seq_len", c.max_seq_len},
          {"max_sites", c.max_sites}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model");
  c.n_layers = j.at("n_layers");
  c.n_heads = j.at("n_heads");
  c.token_dim = j.at("token_dim");
  c.n_sites = j.at("n_sites");
  c.decoder_layers = j.at("decoder_layers");
  c.dropout = j.at("dropout");
  c.max_seq_len = j.at("max_seq_len");
  c.max_sites = j.at("max_sites");
  return c;
}

nlohmann::json train_config_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"batch_size", c.batch_size},
          {"weight_decay", c.weight_decay},
          {"clip_norm", c.clip_norm},
          {"warmup_frac", c.warmup_frac},
          {"total_steps", c.total_steps},
          {"lambda", {c.lambda(0), c.lambda(1), c.lambda(2)}},
          {"eps_norm", c.eps_norm},
          {"normalized_reconstruction", c.normalized_reconstruction},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr = j.at("lr");
  c.batch_size = j.at("batch_size");
  c.weight_decay = j.at("weight_decay");
  c.clip_norm = j.at("clip_norm");
  c.warmup_frac = j.at("warmup_frac");
  c.total_steps = j.at("total_steps");
  c.lambda = Eigen::Vector3d(j.at("lambda")[0], j.at("lambda")[1], j.at("lambda")[2]);
  c.eps_norm = j.at("eps_norm");
  c.normalized_reconstruction = j.at("normalized_reconstruction");
  c.seed = j.at("seed");
  return c;
}

template <typename T>
void write_raw(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw format_error("truncated checkpoint");
  return v;
}

constexpr char kMagic[4] = {'H', 'M', 'A', 'E'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

Checkpoint make_checkpoint(const Model& model, const AdamState& adam, const TrainConfig& tc) {
  Checkpoint ckpt;
  ckpt.model = model.config();
  ckpt.train = tc;
  ckpt.init_seed = model.init_seed();
  ckpt.step = adam.step;
  for (const auto& [name, p] : model.params()) ckpt.tensors[name] = p->value;
  for (const auto& [name, m] : adam.m) ckpt.tensors["opt.m." + name] = m;
  for (const auto& [name, v] : adam.v) ckpt.tensors["opt.v." + name] = v;
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open " + path);
  out.write(kMagic, 4);
  write_raw(out, kVersion);
  nlohmann::json meta = {{"model", model_config_json(ckpt.model)},
                         {"train", train_config_json(ckpt.train)},
                         {"init_seed", ckpt.init_seed},
                         {"step", ckpt.step}};
  const std::string blob = meta.dump();
  write_raw(out, static_cast<std::uint64_t>(blob.size()));
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  write_raw(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, tensor] : ckpt.tensors) {
    write_raw(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_raw(out, static_cast<std::uint32_t>(tensor.rows()));
    write_raw(out, static_cast<std::uint32_t>(tensor.cols()));
    for (Eigen::Index i = 0; i < tensor.rows(); ++i)
      for (Eigen::Index j = 0; j < tensor.cols(); ++j)
        write_raw(out, static_cast<float>(tensor(i, j)));
  }
  if (!out) throw io_error("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw format_error("not a model checkpoint (bad magic)");
  const auto version = read_raw<std::uint32_t>(in);
  if (version != kVersion)
    throw format_error("unsupported checkpoint version " + std::to_string(version));
  const auto blob_len = read_raw<std::uint64_t>(in);
  std::string blob(blob_len, '\0');
  in.read(blob.data(), static_cast<std::streamsize>(blob_len));
  if (!in) throw format_error("truncated checkpoint");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(blob);
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("bad checkpoint metadata: ") + e.what());
  }
  Checkpoint ckpt;
  ckpt.model = model_config_from_json(meta.at("model"));
  ckpt.train = train_config_from_json(meta.at("train"));
  ckpt.init_seed = meta.at("init_seed");
  ckpt.step = meta.at("step");
  const auto n_tensors = read_raw<std::uint32_t>(in);
  for (std::uint32_t t = 0; t < n_tensors; ++t) {
    const auto name_len = read_raw<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw format_error("truncated checkpoint");
    const auto rows = read_raw<std::uint32_t>(in);
    const auto cols = read_raw<std::uint32_t>(in);
    MatrixXd tensor(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i)
      for (std::uint32_t j = 0; j < cols; ++j)
        tensor(i, j) = static_cast<double>(read_raw<float>(in));
    ckpt.tensors[name] = std::move(tensor);
  }
  return ckpt;
}

Model restore_model(const Checkpoint& ckpt) {
  Model model(ckpt.model, ckpt.init_seed);
  for (auto& [name, p] : model.params()) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) throw format_error("checkpoint missing tensor " + name);
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols())
      throw format_error("checkpoint tensor shape mismatch for " + name);
    p->value = it->second;
  }
  return model;
}

AdamState restore_adam(const Checkpoint& ckpt) {
  AdamState st;
  st.step = ckpt.step;
  for (const auto& [name, tensor] : ckpt.tensors) {
    if (name.rfind("opt.m.", 0) == 0) st.m[name.substr(6)] = tensor;
    if (name.rfind("opt.v.", 0) == 0) st.v[name.substr(6)] = tensor;
  }
  return st;
}

RowVectorXd ClassifierHead::logits(const RowVectorXd& z) const {
  return z * w + b;
}

RowVectorXd ClassifierHead::probabilities(const RowVectorXd& z) const {
  RowVectorXd l = logits(z) / temperature;
  l.array() -= l.maxCoeff();
  RowVectorXd e = l.array().exp();
  return e / e.sum();
}

int ClassifierHead::predict(const RowVectorXd& z) const {
  Eigen::Index best = 0;
  logits(z).maxCoeff(&best);
  return static_cast<int>(best);
}

ClassifierHead finetune_classifier(const MatrixXd& z, const std::vector<int>& labels,
                                   int n_classes, std::uint64_t seed, int max_steps) {
  const auto n = static_cast<Eigen::Index>(labels.size());
  if (z.rows() != n || n == 0) throw shape_error("finetune_classifier: size mismatch");
  std::set<int> distinct(labels.begin(), labels.end());
  if (static_cast<int>(distinct.size()) < 2)
    throw validation_error("finetune_classifier: need at least two classes in the labels");
  for (int y : labels)
    if (y < 0 || y >= n_classes) throw validation_error("finetune_classifier: label out of range");

  const Eigen::Index d = z.cols();
  Rng rng(seed_mix(seed, 0x68656164ULL));
  ClassifierHead head;
  head.w.resize(d, n_classes);
  for (Eigen::Index i = 0; i < d; ++i)
    for (int c = 0; c < n_classes; ++c) head.w(i, c) = 0.01 * rng.gaussian();
  head.b = RowVectorXd::Zero(n_classes);

  MatrixXd onehot = MatrixXd::Zero(n, n_classes);
  for (Eigen::Index i = 0; i < n; ++i) onehot(i, labels[static_cast<std::size_t>(i)]) = 1.0;

  constexpr double lr = 0.05, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  MatrixXd mw = MatrixXd::Zero(d, n_classes), vw = mw;
  RowVectorXd mb = RowVectorXd::Zero(n_classes), vb = mb;
  double best_loss = std::numeric_limits<double>::infinity();
  int since_improvement = 0;
  for (int t = 1; t <= max_steps; ++t) {
    MatrixXd logits = (z * head.w).rowwise() + head.b;
    MatrixXd probs(n, n_classes);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      RowVectorXd row = logits.row(i);
      row.array() -= row.maxCoeff();
      RowVectorXd e = row.array().exp();
      probs.row(i) = e / e.sum();
      loss -= std::log(std::max(probs(i, labels[static_cast<std::size_t>(i)]), 1e-300));
    }
    loss /= static_cast<double>(n);
    if (loss < best_loss - 1e-6) {
      best_loss = loss;
      since_improvement = 0;
    } else if (++since_improvement >= 50) {
      break;
    }
    MatrixXd diff = (probs - onehot) / static_cast<double>(n);
    MatrixXd gw = z.transpose() * diff;
    RowVectorXd gb = diff.colwise().sum();
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    mw = beta1 * mw + (1.0 - beta1) * gw;
    vw = beta2 * vw + (1.0 - beta2) * gw.cwiseProduct(gw);
    head.w -= lr * ((mw / bc1).array() / ((vw / bc2).array().sqrt() + eps)).matrix();
    mb = beta1 * mb + (1.0 - beta1) * gb;
    vb = beta2 * vb + (1.0 - beta2) * gb.cwiseProduct(gb);
    head.b -= lr * ((mb / bc1).array() / ((vb / bc2).array().sqrt() + eps)).matrix();
  }
  return head;
}

double RegressorHead::predict(const RowVectorXd& z) const { return z.dot(w) + b; }

RegressorHead finetune_regressor(const MatrixXd& z, const VectorXd& y, double ridge) {
  if (z.rows() != y.size() || y.size() == 0)
    throw shape_error("finetune_regressor: size mismatch");
  const RowVectorXd z_mean = z.colwise().mean();
  const double y_mean = y.mean();
  MatrixXd zc = z.rowwise() - z_mean;
  VectorXd yc = y.array() - y_mean;
  MatrixXd gram = zc.transpose() * zc;
  gram.diagonal().array() += ridge;
  RegressorHead head;
  head.w = gram.ldlt().solve(zc.transpose() * yc);
  head.b = y_mean - z_mean.dot(head.w);
  return head;
}

}  // namespace hmae
