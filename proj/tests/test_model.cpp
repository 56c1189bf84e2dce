#include <cstdio>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "hmae/hamgen.hpp"
#include "hmae/model.hpp"
#include "hmae/rng.hpp"

using namespace hmae;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

namespace {

TokenizerConfig small_tok() {
  TokenizerConfig tok;
  tok.n_qubits = 4;
  tok.max_locality = 2;
  return tok;
}

ModelConfig small_model(const TokenizerConfig& tok) {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 4;
  cfg.token_dim = tok.token_dim();
  cfg.n_sites = tok.n_qubits;
  cfg.decoder_layers = 1;
  cfg.dropout = 0.0;
  cfg.max_seq_len = 16;
  cfg.max_sites = 4;
  return cfg;
}

std::vector<PretrainExample> tfim_examples(int count, std::uint64_t seed,
                                           const TokenizerConfig& tok) {
  FamilySpec spec;
  spec.family = Family::TFIM;
  spec.n_qubits = tok.n_qubits;
  spec.field = Interval(0.2, 2.0);
  spec.count = count;
  spec.seed = seed;
  std::vector<PretrainExample> out;
  for (const auto& rec : generate(spec)) out.push_back(make_pretrain_example(rec, tok));
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("embed replaces masked rows and keeps structural positions") {
  auto tok = small_tok();
  auto cfg = small_model(tok);
  Model model(cfg, 7);
  auto ex = tfim_examples(1, 3, tok)[0];
  const auto k = ex.features.rows();
  REQUIRE(k >= 4);

  // substituting the masked token's projected features leaves its column alone
  MatrixXd altered = ex.features;
  altered(2, 0) += 3.0;  // magnitude
  altered(2, 1) = M_PI;  // phase
  altered(2, 2) = 1.0 - altered(2, 2);  // type one-hot
  auto e1 = model.embed(ex.features, {2});
  auto e2 = model.embed(altered, {2});
  CHECK((e1->value - e2->value).norm() == doctest::Approx(0.0).epsilon(1e-15));

  // but an unmasked substitution changes it
  auto e3 = model.embed(altered, {});
  auto e4 = model.embed(ex.features, {});
  CHECK((e3->value.row(2) - e4->value.row(2)).norm() > 1e-6);

  // empty mask carries no mask-embedding contribution
  auto masked = model.embed(ex.features, {1});
  CHECK((masked->value.row(1) - e4->value.row(1)).norm() > 1e-6);
  CHECK((masked->value.row(0) - e4->value.row(0)).norm() == doctest::Approx(0.0));

  CHECK_THROWS_AS(model.embed(ex.features, {static_cast<std::size_t>(k)}), shape_error);
}

TEST_CASE("embed is permutation-equivariant without the per-index term") {
  auto tok = small_tok();
  auto cfg = small_model(tok);
  Model model(cfg, 11);
  model.params()["embed.pos"]->value.setZero();
  auto ex = tfim_examples(1, 5, tok)[0];
  MatrixXd swapped = ex.features;
  swapped.row(0).swap(swapped.row(3));
  auto a = model.embed(ex.features, {});
  auto b = model.embed(swapped, {});
  CHECK((a->value.row(0) - b->value.row(3)).norm() == doctest::Approx(0.0));
  CHECK((a->value.row(3) - b->value.row(0)).norm() == doctest::Approx(0.0));
  CHECK((a->value.row(1) - b->value.row(1)).norm() == doctest::Approx(0.0));
}

TEST_CASE("zero-depth encoder is the identity and outputs stay finite") {
  auto tok = small_tok();
  auto cfg = small_model(tok);
  cfg.n_layers = 0;
  Model model(cfg, 1);
  auto ex = tfim_examples(1, 9, tok)[0];
  auto emb = model.embed(ex.features, {});
  auto enc = model.encode(emb);
  CHECK((enc->value - emb->value).norm() == doctest::Approx(0.0));

  auto cfg2 = small_model(tok);
  for (std::uint64_t s = 0; s < 100; ++s) {
    Model m2(cfg2, s);
    auto out = m2.encode(m2.embed(ex.features, {0}));
    CHECK(out->value.allFinite());
  }
}

TEST_CASE("decoder shape and zero-layer linear probe") {
  auto tok = small_tok();
  auto cfg = small_model(tok);
  Model model(cfg, 2);
  auto ex = tfim_examples(1, 13, tok)[0];
  auto latent = model.encode(model.embed(ex.features, {0}));
  auto pred = model.decode_reconstruct(latent);
  CHECK(pred->value.rows() == ex.features.rows());
  CHECK(pred->value.cols() == cfg.token_dim);

  cfg.decoder_layers = 0;
  Model probe(cfg, 2);
  auto latent2 = probe.encode(probe.embed(ex.features, {0}));
  auto pred2 = probe.decode_reconstruct(latent2);
  MatrixXd expected = (latent2->value * probe.params()["dec.head.w"]->value).rowwise() +
                      probe.params()["dec.head.b"]->value.row(0);
  CHECK((pred2->value - expected).norm() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("reconstruction loss masks rows and normalizes by magnitude") {
  MatrixXd target = MatrixXd::Zero(3, 4);
  MatrixXd pred_same = target;
  auto p0 = ag::constant(pred_same);
  VectorXd mags(3);
  mags << 1.0, 2.0, 3.0;
  CHECK(loss_reconstruction(p0, target, {1}, mags, true, 0.0)->value(0, 0) ==
        doctest::Approx(0.0));

  // one masked token with squared error 4 and |c| = 1 gives 4
  MatrixXd pred = target;
  pred(0, 0) = 2.0;
  mags(0) = 1.0;
  auto p1 = ag::constant(pred);
  CHECK(loss_reconstruction(p1, target, {0}, mags, true, 0.0)->value(0, 0) ==
        doctest::Approx(4.0));
  // unnormalized variant gives the same number here
  CHECK(loss_reconstruction(p1, target, {0}, mags, false, 0.0)->value(0, 0) ==
        doctest::Approx(4.0));

  // unmasked-row error is invisible
  MatrixXd pred2 = pred;
  pred2.row(2).setConstant(50.0);
  auto p2 = ag::constant(pred2);
  CHECK(loss_reconstruction(p2, target, {0}, mags, true, 0.0)->value(0, 0) ==
        doctest::Approx(4.0));

  CHECK_THROWS_AS(loss_reconstruction(p1, target, {}, mags, true, 0.0), shape_error);
}

TEST_CASE("gradients reach the mask embedding") {
  auto tok = small_tok();
  auto cfg = small_model(tok);
  Model model(cfg, 21);
  auto ex = tfim_examples(1, 17, tok)[0];
  auto latent = model.encode(model.embed(ex.features, {0, 2}));
  auto pred = model.decode_reconstruct(latent);
  auto loss = loss_reconstruction(pred, ex.features, {0, 2}, ex.magnitudes, true, 1e-6);
  model.zero_grad();
  ag::backward(loss);
  CHECK(model.params()["embed.mask"]->grad.norm() > 0.0);
}

TEST_CASE("full-model gradient check against finite differences") {
  auto tok = small_tok();
  auto cfg = small_model(tok);
  Model model(cfg, 31);
  auto ex = tfim_examples(1, 23, tok)[0];
  MatrixXd e_target(1, 1), c_target(1, 1);
  e_target(0, 0) = ex.energy_per_qubit;
  c_target(0, 0) = ex.xi_per_qubit;
  std::set<std::size_t> masked{1, 3};

  auto forward = [&] {
    auto latent = model.encode(model.embed(ex.features, masked));
    auto rec = loss_reconstruction(model.decode_reconstruct(latent), ex.features, masked,
                                   ex.magnitudes, true, 1e-6);
    auto pooled = model.pool(latent);
    auto en = ag::mse(model.energy_head(pooled), e_target);
    auto corr = ag::mse(model.corr_head(pooled), c_target);
    return ag::add(ag::add(ag::scale(rec, 0.6), ag::scale(en, 0.3)), ag::scale(corr, 0.1));
  };

  model.zero_grad();
  ag::backward(forward());
  int checked = 0;
  for (auto& [name, p] : model.params()) {
    MatrixXd analytic = p->grad;
    for (Eigen::Index i = 0; i < p->value.rows(); ++i) {
      for (Eigen::Index j = 0; j < p->value.cols(); ++j) {
        const double orig = p->value(i, j);
        const double h = std::max(1e-6, 1e-6 * std::abs(orig));
        p->value(i, j) = orig + h;
        const double up = forward()->value(0, 0);
        p->value(i, j) = orig - h;
        const double down = forward()->value(0, 0);
        p->value(i, j) = orig;
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(numeric), std::abs(analytic(i, j)), 1e-6});
        INFO(name, "(", i, ",", j, ")");
        CHECK(std::abs(analytic(i, j) - numeric) / denom <= 1e-4);
        ++checked;
      }
    }
  }
  CHECK(checked > 1000);
}

TEST_CASE("learning rate schedule warms up then decays to zero") {
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.total_steps = 100;
  tc.warmup_frac = 0.05;
  CHECK(lr_at(tc, 0) == doctest::Approx(tc.lr / 5.0));
  CHECK(lr_at(tc, 0) < 0.25 * tc.lr);
  CHECK(lr_at(tc, 4) == doctest::Approx(tc.lr));
  CHECK(lr_at(tc, 52) < tc.lr);
  CHECK(lr_at(tc, 99) < lr_at(tc, 52));
  CHECK(lr_at(tc, 99) >= 0.0);
}

TEST_CASE("gradient clipping scales by global norm") {
  auto tok = small_tok();
  auto cfg = small_model(tok);
  Model model(cfg, 41);
  model.zero_grad();
  // put the whole norm into one tensor
  auto& g = model.params()["embed.win"]->grad;
  g.setZero();
  g(0, 0) = 10.0;
  const double pre = clip_global_norm(model.params(), 1.0);
  CHECK(pre == doctest::Approx(10.0));
  CHECK(model.params()["embed.win"]->grad(0, 0) == doctest::Approx(1.0));

  g(0, 0) = 0.5;
  clip_global_norm(model.params(), 1.0);
  CHECK(model.params()["embed.win"]->grad(0, 0) == doctest::Approx(0.5));
}

TEST_CASE("optimizer step with zero grads and zero weight decay is a no-op") {
  auto tok = small_tok();
  auto cfg = small_model(tok);
  Model model(cfg, 43);
  TrainConfig tc;
  tc.weight_decay = 0.0;
  tc.total_steps = 10;
  model.zero_grad();
  MatrixXd before = model.params()["embed.win"]->value;
  AdamState st;
  adamw_step(model, st, tc);
  CHECK((model.params()["embed.win"]->value - before).norm() == doctest::Approx(0.0));
  CHECK(st.step == 1);
}

TEST_CASE("pretraining is deterministic and respects loss weights") {
  auto tok = small_tok();
  auto cfg = small_model(tok);
  auto corpus = tfim_examples(10, 101, tok);
  SaliencyStrategy strategy;
  TrainConfig tc;
  tc.total_steps = 5;
  tc.batch_size = 4;
  tc.seed = 7;

  Model m1(cfg, 1), m2(cfg, 1);
  AdamState a1, a2;
  auto log1 = pretrain(m1, a1, corpus, strategy, tc);
  auto log2 = pretrain(m2, a2, corpus, strategy, tc);
  REQUIRE(log1.size() == 5);
  for (std::size_t i = 0; i < log1.size(); ++i) {
    CHECK(log1[i].loss_total == log2[i].loss_total);
    CHECK(log1[i].loss_rec == log2[i].loss_rec);
    CHECK(log1[i].loss_total >= 0.0);
    CHECK(log1[i].loss_rec >= 0.0);
    CHECK(log1[i].loss_energy >= 0.0);
    CHECK(log1[i].loss_corr >= 0.0);
  }

  // pure-reconstruction weights make the total equal the reconstruction term
  TrainConfig tc_rec = tc;
  tc_rec.lambda = Eigen::Vector3d(1.0, 0.0, 0.0);
  Model m3(cfg, 1);
  AdamState a3;
  auto log3 = pretrain(m3, a3, corpus, strategy, tc_rec);
  for (const auto& row : log3) CHECK(row.loss_total == doctest::Approx(row.loss_rec));
}

TEST_CASE("short pretraining run reduces the loss") {
  auto tok = small_tok();
  auto cfg = small_model(tok);
  auto corpus = tfim_examples(12, 201, tok);
  SaliencyStrategy strategy;
  TrainConfig tc;
  tc.total_steps = 80;
  tc.batch_size = 8;
  tc.lr = 3e-3;
  tc.seed = 3;
  Model model(cfg, 5);
  AdamState adam;
  auto log = pretrain(model, adam, corpus, strategy, tc);
  double early = 0.0, late = 0.0;
  for (int i = 0; i < 5; ++i) early += log[static_cast<std::size_t>(i)].loss_total;
  for (int i = 75; i < 80; ++i) late += log[static_cast<std::size_t>(i)].loss_total;
  CHECK(late < early);
}

TEST_CASE("masking contract holds through the full loss") {
  auto tok = small_tok();
  auto cfg = small_model(tok);
  Model model(cfg, 51);
  auto ex = tfim_examples(1, 61, tok)[0];
  std::set<std::size_t> masked{2};

  auto run = [&](const MatrixXd& input_features) {
    model.zero_grad();
    auto latent = model.encode(model.embed(input_features, masked));
    auto loss = loss_reconstruction(model.decode_reconstruct(latent), ex.features, masked,
                                    ex.magnitudes, true, 1e-6);
    ag::backward(loss);
    return loss->value(0, 0);
  };

  const double base = run(ex.features);
  MatrixXd g1 = model.params()["embed.win"]->grad;
  MatrixXd altered = ex.features;
  altered(2, 0) *= 5.0;  // masked row's magnitude feature; target stays original
  const double changed = run(altered);
  MatrixXd g2 = model.params()["embed.win"]->grad;
  CHECK(changed == doctest::Approx(base).epsilon(1e-14));
  CHECK((g1 - g2).norm() == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("checkpoint round trip is byte-identical and resume matches") {
  auto tok = small_tok();
  auto cfg = small_model(tok);
  auto corpus = tfim_examples(8, 301, tok);
  SaliencyStrategy strategy;
  TrainConfig tc;
  tc.total_steps = 20;
  tc.batch_size = 4;
  tc.seed = 99;

  Model uninterrupted(cfg, 77);
  AdamState full_state;
  auto full_log = pretrain(uninterrupted, full_state, corpus, strategy, tc);

  Model half(cfg, 77);
  AdamState half_state;
  for (int s = 0; s < 10; ++s) pretrain_step(half, half_state, corpus, strategy, tc);

  const std::string path = "ckpt_test.hmae";
  save_checkpoint(make_checkpoint(half, half_state, tc), path);
  auto ckpt = load_checkpoint(path);
  CHECK(ckpt.step == 10);
  const std::string path2 = "ckpt_test2.hmae";
  save_checkpoint(ckpt, path2);
  CHECK(slurp(path) == slurp(path2));

  Model resumed = restore_model(ckpt);
  AdamState resumed_state = restore_adam(ckpt);
  auto tail_log = pretrain(resumed, resumed_state, corpus, strategy, tc);
  REQUIRE(tail_log.size() == 10);
  for (std::size_t i = 0; i < tail_log.size(); ++i) {
    CHECK(tail_log[i].loss_total == full_log[i + 10].loss_total);
    CHECK(tail_log[i].loss_rec == full_log[i + 10].loss_rec);
  }
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("checkpoint format errors are explicit") {
  const std::string path = "ckpt_bad.hmae";
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOPExxxxxxxxxxxxxxxx";
  }
  CHECK_THROWS_AS(load_checkpoint(path), format_error);
  {
    std::ofstream out(path, std::ios::binary);
    out << "HMAE";
    std::uint32_t v = 999;
    out.write(reinterpret_cast<const char*>(&v), 4);
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version"), format_error);
  CHECK_THROWS_AS(load_checkpoint("no_such_checkpoint.hmae"), io_error);
  std::remove(path.c_str());
}

TEST_CASE("classifier head fits separable embeddings and rejects one class") {
  MatrixXd z(8, 3);
  std::vector<int> labels;
  Rng rng(5);
  for (int i = 0; i < 8; ++i) {
    const int y = i % 2;
    z(i, 0) = (y == 0 ? -2.0 : 2.0) + 0.1 * rng.gaussian();
    z(i, 1) = rng.gaussian();
    z(i, 2) = rng.gaussian();
    labels.push_back(y);
  }
  auto head = finetune_classifier(z, labels, 2, 1);
  int correct = 0;
  for (int i = 0; i < 8; ++i)
    if (head.predict(z.row(i)) == labels[static_cast<std::size_t>(i)]) ++correct;
  CHECK(correct == 8);

  RowVectorXd probs = head.probabilities(z.row(0));
  CHECK(probs.sum() == doctest::Approx(1.0));
  CHECK(probs.minCoeff() >= 0.0);

  std::vector<int> one_class(8, 0);
  CHECK_THROWS_AS(finetune_classifier(z, one_class, 2, 1), validation_error);
}

TEST_CASE("regressor head recovers constants and linear maps") {
  MatrixXd z(6, 2);
  z << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12;
  VectorXd y_const = VectorXd::Constant(6, 2.5);
  auto head = finetune_regressor(z, y_const);
  for (int i = 0; i < 6; ++i) CHECK(head.predict(z.row(i)) == doctest::Approx(2.5));

  Rng rng(8);
  MatrixXd z2(30, 3);
  VectorXd y2(30);
  for (int i = 0; i < 30; ++i) {
    for (int j = 0; j < 3; ++j) z2(i, j) = rng.gaussian();
    y2(i) = 2.0 * z2(i, 0) - z2(i, 1) + 0.5;
  }
  auto head2 = finetune_regressor(z2, y2);
  for (int i = 0; i < 30; ++i)
    CHECK(head2.predict(z2.row(i)) == doctest::Approx(y2(i)).epsilon(1e-3));
}

TEST_CASE("metrics csv has one row per step") {
  std::vector<PretrainMetricsRow> rows(3);
  rows[0] = {0, 1e-4, 1.0, 0.5, 0.3, 0.2};
  rows[1] = {1, 2e-4, 0.9, 0.4, 0.3, 0.2};
  rows[2] = {2, 3e-4, 0.8, 0.3, 0.3, 0.2};
  const std::string path = "metrics_test.csv";
  write_metrics_csv(rows, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "step,lr,loss_total,loss_rec,loss_energy,loss_corr");
  int count = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++count;
  CHECK(count == 3);
  std::remove(path.c_str());
}

TEST_CASE("config validation") {
  auto tok = small_tok();
  auto cfg = small_model(tok);
  cfg.n_heads = 3;  // 16 % 3 != 0
  CHECK_THROWS_AS(Model(cfg, 1), config_error);
  TrainConfig tc;
  tc.lambda = Eigen::Vector3d(0.5, 0.5, 0.5);
  CHECK_THROWS_AS(tc.validate(), config_error);
  TrainConfig tc2;
  tc2.lr = 0.0;
  CHECK_THROWS_AS(tc2.validate(), config_error);
}
