#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hmae/active.hpp"
#include "hmae/exact.hpp"
#include "hmae/hamgen.hpp"
#include "hmae/model.hpp"
#include "hmae/rng.hpp"
#include "hmae/saliency.hpp"
#include "hmae/stats.hpp"
#include "hmae/tokenizer.hpp"
#include "json.hpp"

namespace {

using nlohmann::json;
using namespace hmae;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// config

struct RunConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  std::vector<FamilySpec> families;
  std::array<double, 3> fractions{0.8, 0.1, 0.1};
  int max_locality = 4;
  SaliencyStrategy strategy;
  ModelConfig model;  // token_dim / n_sites filled once the corpus is known
  TrainConfig train;

  std::string task = "phase";
  int k_shot = 10;
  int finetune_seeds = 5;
  bool with_scratch = false;

  int qmi_count = 20;
  int qmi_n_min = 4;
  int qmi_n_max = 6;
  double qmi_beta = 1.0;
  int qmi_samples = 5;
  std::vector<std::string> qmi_strategies{"random", "energy_only", "base", "practical"};

  std::vector<std::string> compare_strategies{"random", "energy_only", "base", "practical"};
  std::string compare_reference = "practical";
  int compare_seeds = 3;

  std::vector<std::string> acquisitions{"entropy", "margin", "distance", "disagreement"};
  int active_batch_k = 10;
  int active_budget = 100;
  int active_ensemble = 5;
  int active_seed_count = 20;
};

json default_config() {
  return json{
      {"seed", 1},
      {"out_dir", "out"},
      {"families",
       json::array({json{{"family", "tfim"},
                         {"n_qubits", 4},
                         {"topology", "open"},
                         {"coupling", {1.0, 1.0}},
                         {"field", {0.2, 2.0}},
                         {"anisotropy", {1.0, 1.0}},
                         {"gamma", {0.5, 0.5}},
                         {"noise_sigma", 0.0},
                         {"count", 200}}})},
      {"split_fractions", {0.8, 0.1, 0.1}},
      {"tokenizer", json{{"max_locality", 4}}},
      {"strategy",
       json{{"kind", "practical"},
            {"alpha_temperature", 2.0},
            {"mask_ratio", 0.5},
            {"weights", {0.1, 0.8, 0.1}},
            {"alpha_mix", 0.65},
            {"beta_thermal", 1.0},
            {"k_b_t", -1.0},
            {"corrected_quantum", false},
            {"inverted_prefactor", false}}},
      {"model",
       json{{"d_model", 64},
            {"n_layers", 2},
            {"n_heads", 4},
            {"decoder_layers", 2},
            {"dropout", 0.1},
            {"max_seq_len", 64},
            {"max_sites", 12}}},
      {"train",
       json{{"lr", 1e-4},
            {"batch_size", 8},
            {"weight_decay", 1e-5},
            {"clip_norm", 1.0},
            {"warmup_frac", 0.05},
            {"total_steps", 100},
            {"lambda", {0.6, 0.3, 0.1}},
            {"eps_norm", 1e-6},
            {"normalized_reconstruction", true}}},
      {"finetune",
       json{{"task", "phase"}, {"k", 10}, {"seeds", 5}, {"with_scratch", false}}},
      {"qmi_verify",
       json{{"count", 20},
            {"n_min", 4},
            {"n_max", 6},
            {"beta", 1.0},
            {"samples", 5},
            {"strategies", {"random", "energy_only", "base", "practical"}}}},
      {"mask_compare",
       json{{"strategies", {"random", "energy_only", "base", "practical"}},
            {"reference", "practical"},
            {"seeds", 3}}},
      {"active",
       json{{"acquisitions", {"entropy", "margin", "distance", "disagreement"}},
            {"batch_k", 10},
            {"budget", 100},
            {"ensemble_size", 5},
            {"seed_count", 20}}},
  };
}

void check_keys(const json& obj, const std::set<std::string>& allowed,
                const std::string& where) {
  if (!obj.is_object()) throw config_error("config: " + where + " must be an object");
  for (const auto& [key, value] : obj.items())
    if (!allowed.count(key))
      throw config_error("config: unknown key '" + key + "' in " + where);
}

Interval interval_from(const json& j, const std::string& where) {
  if (j.is_number()) return Interval(j.get<double>());
  if (j.is_array() && j.size() == 2)
    return Interval(j[0].get<double>(), j[1].get<double>());
  throw config_error("config: " + where + " must be a number or [lo, hi]");
}

FamilySpec family_from(const json& j, std::uint64_t default_seed, const std::string& where) {
  check_keys(j,
             {"family", "n_qubits", "topology", "coupling", "field", "anisotropy", "gamma",
              "noise_sigma", "count", "seed"},
             where);
  FamilySpec spec;
  spec.family = family_from_name(j.at("family"));
  spec.n_qubits = j.value("n_qubits", 4);
  const std::string topo = j.value("topology", "open");
  if (topo == "open")
    spec.topology = Topology::ChainOpen;
  else if (topo == "periodic")
    spec.topology = Topology::ChainPeriodic;
  else
    throw config_error("config: unknown topology '" + topo + "'");
  if (j.contains("coupling")) spec.coupling = interval_from(j["coupling"], where + ".coupling");
  if (j.contains("field")) spec.field = interval_from(j["field"], where + ".field");
  if (j.contains("anisotropy"))
    spec.anisotropy = interval_from(j["anisotropy"], where + ".anisotropy");
  if (j.contains("gamma")) spec.gamma = interval_from(j["gamma"], where + ".gamma");
  spec.noise_sigma = j.value("noise_sigma", 0.0);
  spec.count = j.value("count", 1);
  spec.seed = j.value("seed", default_seed);
  spec.validate();
  return spec;
}

RunConfig parse_config(const json& j) {
  check_keys(j,
             {"seed", "out_dir", "families", "split_fractions", "tokenizer", "strategy",
              "model", "train", "finetune", "qmi_verify", "mask_compare", "active"},
             "top level");
  RunConfig cfg;
  cfg.seed = j.value("seed", 1);
  cfg.out_dir = j.value("out_dir", "out");
  if (j.contains("families")) {
    std::size_t idx = 0;
    for (const auto& fj : j["families"]) {
      cfg.families.push_back(
          family_from(fj, seed_mix(cfg.seed, idx), "families[" + std::to_string(idx) + "]"));
      ++idx;
    }
  }
  if (j.contains("split_fractions")) {
    const auto& f = j["split_fractions"];
    if (!f.is_array() || f.size() != 3)
      throw config_error("config: split_fractions must have 3 entries");
    cfg.fractions = {f[0].get<double>(), f[1].get<double>(), f[2].get<double>()};
  }
  if (j.contains("tokenizer")) {
    check_keys(j["tokenizer"], {"max_locality"}, "tokenizer");
    cfg.max_locality = j["tokenizer"].value("max_locality", 4);
  }
  if (j.contains("strategy")) {
    const auto& s = j["strategy"];
    check_keys(s,
               {"kind", "alpha_temperature", "mask_ratio", "weights", "alpha_mix",
                "beta_thermal", "k_b_t", "corrected_quantum", "inverted_prefactor"},
               "strategy");
    cfg.strategy.kind = strategy_from_name(s.value("kind", "practical"));
    cfg.strategy.alpha_temperature = s.value("alpha_temperature", 2.0);
    cfg.strategy.mask_ratio = s.value("mask_ratio", 0.5);
    if (s.contains("weights")) {
      const auto& w = s["weights"];
      if (!w.is_array() || w.size() != 3)
        throw config_error("config: strategy.weights must have 3 entries");
      cfg.strategy.weights = Eigen::Vector3d(w[0].get<double>(), w[1].get<double>(),
                                             w[2].get<double>());
    }
    cfg.strategy.alpha_mix = s.value("alpha_mix", 0.65);
    cfg.strategy.beta_thermal = s.value("beta_thermal", 1.0);
    cfg.strategy.k_b_t = s.value("k_b_t", -1.0);
    cfg.strategy.corrected_quantum = s.value("corrected_quantum", false);
    cfg.strategy.inverted_prefactor = s.value("inverted_prefactor", false);
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    check_keys(m,
               {"d_model", "n_layers", "n_heads", "decoder_layers", "dropout", "max_seq_len",
                "max_sites"},
               "model");
    cfg.model.d_model = m.value("d_model", 64);
    cfg.model.n_layers = m.value("n_layers", 2);
    cfg.model.n_heads = m.value("n_heads", 4);
    cfg.model.decoder_layers = m.value("decoder_layers", 2);
    cfg.model.dropout = m.value("dropout", 0.1);
    cfg.model.max_seq_len = m.value("max_seq_len", 64);
    cfg.model.max_sites = m.value("max_sites", 12);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    check_keys(t,
               {"lr", "batch_size", "weight_decay", "clip_norm", "warmup_frac", "total_steps",
                "lambda", "eps_norm", "normalized_reconstruction"},
               "train");
    cfg.train.lr = t.value("lr", 1e-4);
    cfg.train.batch_size = t.value("batch_size", 8);
    cfg.train.weight_decay = t.value("weight_decay", 1e-5);
    cfg.train.clip_norm = t.value("clip_norm", 1.0);
    cfg.train.warmup_frac = t.value("warmup_frac", 0.05);
    cfg.train.total_steps = t.value("total_steps", 100);
    if (t.contains("lambda")) {
      const auto& l = t["lambda"];
      if (!l.is_array() || l.size() != 3)
        throw config_error("config: train.lambda must have 3 entries");
      cfg.train.lambda =
          Eigen::Vector3d(l[0].get<double>(), l[1].get<double>(), l[2].get<double>());
    }
    cfg.train.eps_norm = t.value("eps_norm", 1e-6);
    cfg.train.normalized_reconstruction = t.value("normalized_reconstruction", true);
  }
  cfg.train.seed = cfg.seed;
  if (j.contains("finetune")) {
    const auto& f = j["finetune"];
    check_keys(f, {"task", "k", "seeds", "with_scratch"}, "finetune");
    cfg.task = f.value("task", "phase");
    if (cfg.task != "phase" && cfg.task != "energy")
      throw config_error("config: finetune.task must be 'phase' or 'energy'");
    cfg.k_shot = f.value("k", 10);
    cfg.finetune_seeds = f.value("seeds", 5);
    cfg.with_scratch = f.value("with_scratch", false);
  }
  if (j.contains("qmi_verify")) {
    const auto& q = j["qmi_verify"];
    check_keys(q, {"count", "n_min", "n_max", "beta", "samples", "strategies"}, "qmi_verify");
    cfg.qmi_count = q.value("count", 20);
    cfg.qmi_n_min = q.value("n_min", 4);
    cfg.qmi_n_max = q.value("n_max", 6);
    cfg.qmi_beta = q.value("beta", 1.0);
    cfg.qmi_samples = q.value("samples", 5);
    if (q.contains("strategies"))
      cfg.qmi_strategies = q["strategies"].get<std::vector<std::string>>();
  }
  if (j.contains("mask_compare")) {
    const auto& m = j["mask_compare"];
    check_keys(m, {"strategies", "reference", "seeds"}, "mask_compare");
    if (m.contains("strategies"))
      cfg.compare_strategies = m["strategies"].get<std::vector<std::string>>();
    cfg.compare_reference = m.value("reference", "practical");
    cfg.compare_seeds = m.value("seeds", 3);
  }
  if (j.contains("active")) {
    const auto& a = j["active"];
    check_keys(a, {"acquisitions", "batch_k", "budget", "ensemble_size", "seed_count"},
               "active");
    if (a.contains("acquisitions"))
      cfg.acquisitions = a["acquisitions"].get<std::vector<std::string>>();
    cfg.active_batch_k = a.value("batch_k", 10);
    cfg.active_budget = a.value("budget", 100);
    cfg.active_ensemble = a.value("ensemble_size", 5);
    cfg.active_seed_count = a.value("seed_count", 20);
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw config_error(std::string("config parse failure: ") + e.what());
  }
  try {
    return parse_config(j);
  } catch (const config_error&) {
    throw;
  } catch (const std::exception& e) {
    throw config_error(std::string("config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// small utilities

void atomic_write(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw io_error("cannot open " + tmp);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw io_error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::string fnv1a_hex(const std::string& data) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

std::string iso_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%FT%TZ", std::gmtime(&t));
  return buf;
}

TokenizerConfig tokenizer_for(const std::vector<DatasetRecord>& records, int max_locality) {
  TokenizerConfig tok;
  tok.max_locality = max_locality;
  tok.n_qubits = 2;
  for (const auto& rec : records)
    tok.n_qubits = std::max(tok.n_qubits, rec.hamiltonian.n_qubits());
  return tok;
}

TokenizerConfig tokenizer_from_model(const ModelConfig& m) {
  TokenizerConfig tok;
  tok.n_qubits = m.n_sites;
  tok.max_locality = (m.token_dim - 2 - m.n_sites) / 3;
  return tok;
}

ModelConfig resolve_model_config(ModelConfig base, const TokenizerConfig& tok,
                                 const std::vector<DatasetRecord>& records) {
  base.token_dim = tok.token_dim();
  base.n_sites = tok.n_qubits;
  base.max_sites = std::max(base.max_sites, tok.n_qubits);
  int longest = 1;
  for (const auto& rec : records)
    longest = std::max(longest, static_cast<int>(rec.hamiltonian.n_terms()));
  base.max_seq_len = std::max(base.max_seq_len, longest);
  return base;
}

std::vector<const DatasetRecord*> by_split(const std::vector<DatasetRecord>& records,
                                           Split split) {
  std::vector<const DatasetRecord*> out;
  for (const auto& rec : records)
    if (rec.split == split) out.push_back(&rec);
  return out;
}

MatrixXd pooled_embeddings(const Model& model, const TokenizerConfig& tok,
                           const std::vector<const DatasetRecord*>& records) {
  MatrixXd z(static_cast<Eigen::Index>(records.size()), model.config().d_model);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto seq = tokenize(records[i]->hamiltonian, tok);
    z.row(static_cast<Eigen::Index>(i)) = model.pooled_embedding(token_features(seq, tok));
  }
  return z;
}

// K records per class, deterministic per seed; throws when a class is empty.
std::vector<std::size_t> k_shot_sample(const std::vector<int>& labels, int n_classes, int k,
                                       std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> per_class(static_cast<std::size_t>(n_classes));
  for (std::size_t i = 0; i < labels.size(); ++i)
    per_class[static_cast<std::size_t>(labels[i])].push_back(i);
  Rng rng(seed);
  std::vector<std::size_t> picks;
  for (auto& bucket : per_class) {
    if (bucket.empty()) throw validation_error("k-shot sample: a class has no examples");
    for (std::size_t i = bucket.size(); i > 1; --i)
      std::swap(bucket[i - 1], bucket[rng.below(i)]);
    for (std::size_t i = 0; i < std::min<std::size_t>(bucket.size(), static_cast<std::size_t>(k));
         ++i)
      picks.push_back(bucket[i]);
  }
  std::sort(picks.begin(), picks.end());
  return picks;
}

struct FewShotMetrics {
  double accuracy = 0.0;
  double f1 = 0.0;
  double mae = 0.0;
  double rmse = 0.0;
  double r2 = 0.0;
};

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double sq = 0.0;
  for (double x : v) sq += (x - m) * (x - m);
  return std::sqrt(sq / static_cast<double>(v.size()));
}

// ---------------------------------------------------------------------------
// gen

int cmd_gen(const RunConfig& cfg, const std::string& out_path) {
  if (cfg.families.empty()) throw config_error("gen: no families configured");
  std::vector<DatasetRecord> records;
  for (const auto& spec : cfg.families) {
    auto batch = generate(spec);
    records.insert(records.end(), batch.begin(), batch.end());
  }
  const auto report = split_dataset(records, cfg.fractions, seed_mix(cfg.seed, 0x5eedULL));

  std::ostringstream corpus;
  for (const auto& rec : records) corpus << record_to_json_line(rec) << '\n';
  const std::string body = corpus.str();
  atomic_write(out_path, body);

  std::map<std::string, std::map<std::string, int>> counts;
  for (const auto& rec : records) ++counts[family_name(rec.family)][split_name(rec.split)];
  json manifest = {{"seed", cfg.seed},
                   {"total", records.size()},
                   {"content_hash", fnv1a_hex(body)},
                   {"stratified", report.stratified},
                   {"counts", counts},
                   {"generated_at", iso_now()}};
  atomic_write(out_path + ".manifest.json", manifest.dump(2) + "\n");
  std::cout << "wrote " << records.size() << " records to " << out_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// pretrain

int cmd_pretrain(const RunConfig& cfg, const std::string& corpus_path,
                 const std::string& ckpt_path, const std::string& metrics_path,
                 const std::string& resume_path) {
  const auto records = read_jsonl(corpus_path);
  const auto train_recs = by_split(records, Split::Train);
  if (train_recs.empty()) throw config_error("pretrain: corpus has no train split");

  TokenizerConfig tok;
  ModelConfig mcfg;
  Model model(ModelConfig{.d_model = 8, .n_heads = 1, .token_dim = 1, .n_sites = 1}, 0);
  AdamState adam;
  if (!resume_path.empty()) {
    const auto ckpt = load_checkpoint(resume_path);
    mcfg = ckpt.model;
    tok = tokenizer_from_model(mcfg);
    model = restore_model(ckpt);
    adam = restore_adam(ckpt);
  } else {
    tok = tokenizer_for(records, cfg.max_locality);
    mcfg = resolve_model_config(cfg.model, tok, records);
    model = Model(mcfg, seed_mix(cfg.seed, 0x1417ULL));
  }

  std::vector<PretrainExample> examples;
  for (const auto* rec : train_recs) examples.push_back(make_pretrain_example(*rec, tok));

  auto log = pretrain(model, adam, examples, cfg.strategy, cfg.train);

  const std::string tmp_metrics = metrics_path + ".tmp";
  write_metrics_csv(log, tmp_metrics);
  std::filesystem::rename(tmp_metrics, metrics_path);

  const std::string tmp_ckpt = ckpt_path + ".tmp";
  save_checkpoint(make_checkpoint(model, adam, cfg.train), tmp_ckpt);
  std::filesystem::rename(tmp_ckpt, ckpt_path);
  std::cout << "pretrained to step " << adam.step << "; checkpoint " << ckpt_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// finetune + eval

FewShotMetrics eval_few_shot(const Model& model, const TokenizerConfig& tok,
                             const std::vector<const DatasetRecord*>& train_recs,
                             const std::vector<const DatasetRecord*>& test_recs,
                             const std::string& task, int k, int n_classes,
                             std::uint64_t seed) {
  const MatrixXd train_z = pooled_embeddings(model, tok, train_recs);
  const MatrixXd test_z = pooled_embeddings(model, tok, test_recs);
  FewShotMetrics out;
  if (task == "phase") {
    std::vector<int> train_y, test_y;
    for (const auto* r : train_recs) train_y.push_back(r->labels.phase);
    for (const auto* r : test_recs) test_y.push_back(r->labels.phase);
    const auto picks = k_shot_sample(train_y, n_classes, k, seed);
    MatrixXd z(static_cast<Eigen::Index>(picks.size()), train_z.cols());
    std::vector<int> y;
    for (std::size_t i = 0; i < picks.size(); ++i) {
      z.row(static_cast<Eigen::Index>(i)) = train_z.row(static_cast<Eigen::Index>(picks[i]));
      y.push_back(train_y[picks[i]]);
    }
    const auto head = finetune_classifier(z, y, n_classes, seed_mix(seed, 0xc1a5ULL));
    std::vector<int> pred;
    for (Eigen::Index i = 0; i < test_z.rows(); ++i) pred.push_back(head.predict(test_z.row(i)));
    out.accuracy = accuracy(pred, test_y);
    out.f1 = macro_f1(pred, test_y, n_classes);
  } else {
    // K examples total; heads learn energy per qubit, metrics report total energy
    std::vector<std::size_t> order(train_recs.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const auto take = std::min<std::size_t>(order.size(), static_cast<std::size_t>(k));
    MatrixXd z(static_cast<Eigen::Index>(take), train_z.cols());
    VectorXd y(static_cast<Eigen::Index>(take));
    for (std::size_t i = 0; i < take; ++i) {
      z.row(static_cast<Eigen::Index>(i)) = train_z.row(static_cast<Eigen::Index>(order[i]));
      y(static_cast<Eigen::Index>(i)) = train_recs[order[i]]->labels.energy_per_qubit;
    }
    const auto head = finetune_regressor(z, y);
    VectorXd pred(test_z.rows()), truth(test_z.rows());
    for (Eigen::Index i = 0; i < test_z.rows(); ++i) {
      const auto* rec = test_recs[static_cast<std::size_t>(i)];
      pred(i) = head.predict(test_z.row(i)) * rec->hamiltonian.n_qubits();
      truth(i) = rec->labels.energy;
    }
    out.mae = mean_absolute_error(pred, truth);
    out.rmse = root_mean_squared_error(pred, truth);
    out.r2 = r_squared(pred, truth);
  }
  return out;
}

json summarize_arm(const std::vector<FewShotMetrics>& runs, const std::string& task) {
  json arm;
  auto collect = [&runs](auto member) {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(r.*member);
    return v;
  };
  if (task == "phase") {
    arm["accuracy_mean"] = mean_of(collect(&FewShotMetrics::accuracy));
    arm["accuracy_std"] = std_of(collect(&FewShotMetrics::accuracy));
    arm["f1_mean"] = mean_of(collect(&FewShotMetrics::f1));
    arm["f1_std"] = std_of(collect(&FewShotMetrics::f1));
  } else {
    arm["mae_mean"] = mean_of(collect(&FewShotMetrics::mae));
    arm["mae_std"] = std_of(collect(&FewShotMetrics::mae));
    arm["rmse_mean"] = mean_of(collect(&FewShotMetrics::rmse));
    arm["rmse_std"] = std_of(collect(&FewShotMetrics::rmse));
    arm["r2_mean"] = mean_of(collect(&FewShotMetrics::r2));
    arm["r2_std"] = std_of(collect(&FewShotMetrics::r2));
  }
  return arm;
}

int cmd_finetune(const RunConfig& cfg, const std::string& ckpt_path,
                 const std::string& corpus_path, const std::string& out_path) {
  const auto ckpt = load_checkpoint(ckpt_path);
  const Model model = restore_model(ckpt);
  const auto tok = tokenizer_from_model(ckpt.model);
  const auto records = read_jsonl(corpus_path);
  const auto train_recs = by_split(records, Split::Train);
  const auto test_recs = by_split(records, Split::Test);
  if (train_recs.empty() || test_recs.empty())
    throw config_error("finetune: corpus needs train and test splits");

  int n_classes = 2;
  for (const auto& rec : records) n_classes = std::max(n_classes, rec.labels.phase + 1);

  std::vector<FewShotMetrics> pretrained_runs, scratch_runs;
  for (int s = 0; s < cfg.finetune_seeds; ++s) {
    const auto seed = seed_mix(cfg.seed, 0xf17eULL, static_cast<std::uint64_t>(s));
    pretrained_runs.push_back(eval_few_shot(model, tok, train_recs, test_recs, cfg.task,
                                            cfg.k_shot, n_classes, seed));
    if (cfg.with_scratch) {
      const Model scratch(ckpt.model, seed_mix(cfg.seed, 0x5c7a7cULL,
                                               static_cast<std::uint64_t>(s)));
      scratch_runs.push_back(eval_few_shot(scratch, tok, train_recs, test_recs, cfg.task,
                                           cfg.k_shot, n_classes, seed));
    }
  }

  json result = {{"task", cfg.task},
                 {"k", cfg.k_shot},
                 {"seeds", cfg.finetune_seeds},
                 {"pretrained", summarize_arm(pretrained_runs, cfg.task)}};
  if (cfg.with_scratch) result["scratch"] = summarize_arm(scratch_runs, cfg.task);
  if (cfg.task == "phase") {
    std::vector<int> counts(static_cast<std::size_t>(n_classes), 0);
    for (const auto* r : test_recs) ++counts[static_cast<std::size_t>(r->labels.phase)];
    result["majority_accuracy"] =
        static_cast<double>(*std::max_element(counts.begin(), counts.end())) /
        static_cast<double>(test_recs.size());
  }
  atomic_write(out_path, result.dump(2) + "\n");
  std::cout << result.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// qmi-verify

Hamiltonian random_small_hamiltonian(int n, Rng& rng, int which) {
  const double j = rng.uniform(0.5, 1.5);
  switch (which % 3) {
    case 0: return make_tfim(n, Topology::ChainOpen, j, rng.uniform(0.2, 2.0));
    case 1: return make_xxz(n, Topology::ChainOpen, j, rng.uniform(-1.5, 1.5));
    default: return make_xy(n, Topology::ChainOpen, j, rng.uniform(0.0, 1.0),
                            rng.uniform(0.0, 1.5));
  }
}

int cmd_qmi_verify(const RunConfig& cfg, const std::string& out_csv,
                   const std::string& out_json) {
  if (cfg.qmi_n_min < 2 || cfg.qmi_n_max < cfg.qmi_n_min || cfg.qmi_n_max > 8)
    throw config_error("qmi_verify: n range out of bounds");
  std::vector<Hamiltonian> hams;
  for (int i = 0; i < cfg.qmi_count; ++i) {
    Rng rng(seed_mix(cfg.seed, 0x9a1ULL, static_cast<std::uint64_t>(i)));
    const int n = cfg.qmi_n_min + i % (cfg.qmi_n_max - cfg.qmi_n_min + 1);
    hams.push_back(random_small_hamiltonian(n, rng, i));
  }

  // entropies are computed in nats internally; this report converts to bits
  std::map<std::string, std::vector<double>> retained;  // strategy -> per-Hamiltonian mean
  std::ostringstream csv;
  csv << "index,n_qubits,strategy,retained_qmi_bits\n" << std::setprecision(17);
  for (const auto& name : cfg.qmi_strategies) {
    SaliencyStrategy strategy = cfg.strategy;
    strategy.kind = strategy_from_name(name);
    for (std::size_t i = 0; i < hams.size(); ++i) {
      // retained QMI = mean over masked terms of the correlation across the
      // cut that isolates that term's support; a single bipartition built
      // from the whole masked set washes out which terms were picked
      double total = 0.0;
      int cuts = 0;
      for (int s = 0; s < cfg.qmi_samples; ++s) {
        const auto plan = make_masking_plan(
            hams[i], strategy,
            seed_mix(cfg.seed, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(s)));
        for (std::size_t t : plan.masked) {
          const auto partition = term_partition_to_site_partition(hams[i], {t});
          total += qmi(hams[i], partition, cfg.qmi_beta);
          ++cuts;
        }
      }
      const double mean = total / cuts / std::log(2.0);
      retained[name].push_back(mean);
      csv << i << ',' << hams[i].n_qubits() << ',' << name << ',' << mean << '\n';
    }
  }
  atomic_write(out_csv, csv.str());

  json summary;
  for (const auto& name : cfg.qmi_strategies)
    summary["mean_retained_qmi_bits"][name] = mean_of(retained[name]);

  // per-term saliency vs the QMI across the cut that isolates that term
  for (const auto& name : cfg.qmi_strategies) {
    if (name == "random") continue;
    SaliencyStrategy strategy = cfg.strategy;
    strategy.kind = strategy_from_name(name);
    std::vector<double> sal, term_qmi;
    for (const auto& ham : hams) {
      const VectorXd scores = compute_saliency(ham, strategy);
      for (std::size_t t = 0; t < ham.n_terms(); ++t) {
        const auto partition = term_partition_to_site_partition(ham, {t});
        sal.push_back(scores(static_cast<Eigen::Index>(t)));
        term_qmi.push_back(qmi(ham, partition, cfg.qmi_beta));
      }
    }
    Eigen::Map<VectorXd> sv(sal.data(), static_cast<Eigen::Index>(sal.size()));
    Eigen::Map<VectorXd> qv(term_qmi.data(), static_cast<Eigen::Index>(term_qmi.size()));
    summary["saliency_qmi_pearson"][name] = pearson(sv, qv);
    summary["saliency_qmi_spearman"][name] = spearman(sv, qv);
  }

  if (retained.count("random")) {
    for (const auto& name : cfg.qmi_strategies) {
      if (name == "random") continue;
      int wins = 0, trials = 0;
      for (std::size_t i = 0; i < hams.size(); ++i) {
        const double diff = retained[name][i] - retained["random"][i];
        if (diff == 0.0) continue;
        ++trials;
        if (diff > 0.0) ++wins;
      }
      summary["sign_test_p_vs_random"][name] = sign_test_p(wins, trials);
      summary["wins_vs_random"][name] = wins;
      summary["trials_vs_random"][name] = trials;
    }
  }
  atomic_write(out_json, summary.dump(2) + "\n");
  std::cout << summary.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// mask-compare

int cmd_mask_compare(const RunConfig& cfg, const std::string& corpus_path,
                     const std::string& out_csv) {
  if (cfg.compare_seeds < 3) throw config_error("mask_compare: needs at least 3 seeds");
  auto strategies = cfg.compare_strategies;
  if (std::find(strategies.begin(), strategies.end(), cfg.compare_reference) ==
      strategies.end())
    strategies.push_back(cfg.compare_reference);

  const auto records = read_jsonl(corpus_path);
  const auto train_recs = by_split(records, Split::Train);
  const auto test_recs = by_split(records, Split::Test);
  if (train_recs.empty() || test_recs.empty())
    throw config_error("mask_compare: corpus needs train and test splits");
  const auto tok = tokenizer_for(records, cfg.max_locality);
  const auto mcfg = resolve_model_config(cfg.model, tok, records);
  int n_classes = 2;
  for (const auto& rec : records) n_classes = std::max(n_classes, rec.labels.phase + 1);

  std::vector<PretrainExample> examples;
  for (const auto* rec : train_recs) examples.push_back(make_pretrain_example(*rec, tok));

  struct Row {
    std::string strategy;
    double mean_acc = 0.0, mean_mae = 0.0;
  };
  std::vector<Row> rows;
  for (const auto& name : strategies) {
    SaliencyStrategy strategy = cfg.strategy;
    strategy.kind = strategy_from_name(name);
    std::vector<double> accs, maes;
    for (int s = 0; s < cfg.compare_seeds; ++s) {
      // same init/seeds across strategies; only the masking differs
      Model model(mcfg, seed_mix(cfg.seed, 0x1417ULL, static_cast<std::uint64_t>(s)));
      AdamState adam;
      TrainConfig tc = cfg.train;
      tc.seed = seed_mix(cfg.seed, 0x7247ULL, static_cast<std::uint64_t>(s));
      pretrain(model, adam, examples, strategy, tc);
      const auto seed = seed_mix(cfg.seed, 0xf17eULL, static_cast<std::uint64_t>(s));
      accs.push_back(eval_few_shot(model, tok, train_recs, test_recs, "phase", cfg.k_shot,
                                   n_classes, seed)
                         .accuracy);
      maes.push_back(eval_few_shot(model, tok, train_recs, test_recs, "energy", cfg.k_shot,
                                   n_classes, seed)
                         .mae);
    }
    rows.push_back({name, mean_of(accs), mean_of(maes)});
  }

  double ref_acc = 0.0, ref_mae = 0.0;
  for (const auto& row : rows) {
    if (row.strategy == cfg.compare_reference) {
      ref_acc = row.mean_acc;
      ref_mae = row.mean_mae;
    }
  }
  std::ostringstream csv;
  csv << "strategy,seeds,mean_accuracy,delta_accuracy,mean_mae,delta_mae\n"
      << std::setprecision(17);
  for (const auto& row : rows)
    csv << row.strategy << ',' << cfg.compare_seeds << ',' << row.mean_acc << ','
        << row.mean_acc - ref_acc << ',' << row.mean_mae << ',' << row.mean_mae - ref_mae
        << '\n';
  atomic_write(out_csv, csv.str());
  std::cout << csv.str();
  return 0;
}

// ---------------------------------------------------------------------------
// active-learn

int cmd_active_learn(const RunConfig& cfg, const std::string& ckpt_path,
                     const std::string& corpus_path, const std::string& out_csv) {
  const auto ckpt = load_checkpoint(ckpt_path);
  const Model model = restore_model(ckpt);
  const auto tok = tokenizer_from_model(ckpt.model);
  const auto records = read_jsonl(corpus_path);
  const auto pool_recs = by_split(records, Split::Train);
  const auto test_recs = by_split(records, Split::Test);
  if (pool_recs.empty() || test_recs.empty())
    throw config_error("active_learn: corpus needs train and test splits");

  const MatrixXd pool_z = pooled_embeddings(model, tok, pool_recs);
  const MatrixXd test_z = pooled_embeddings(model, tok, test_recs);
  std::vector<int> pool_phase, test_phase;
  VectorXd pool_energy(pool_z.rows()), test_energy(test_z.rows());
  int n_classes = 2;
  for (std::size_t i = 0; i < pool_recs.size(); ++i) {
    pool_phase.push_back(pool_recs[i]->labels.phase);
    pool_energy(static_cast<Eigen::Index>(i)) = pool_recs[i]->labels.energy;
    n_classes = std::max(n_classes, pool_recs[i]->labels.phase + 1);
  }
  for (std::size_t i = 0; i < test_recs.size(); ++i) {
    test_phase.push_back(test_recs[i]->labels.phase);
    test_energy(static_cast<Eigen::Index>(i)) = test_recs[i]->labels.energy;
  }

  // phase-stratified deterministic seed set
  std::vector<std::vector<std::size_t>> buckets(static_cast<std::size_t>(n_classes));
  for (std::size_t i = 0; i < pool_phase.size(); ++i)
    buckets[static_cast<std::size_t>(pool_phase[i])].push_back(i);
  Rng rng(seed_mix(cfg.seed, 0xa1ULL));
  for (auto& bucket : buckets)
    for (std::size_t i = bucket.size(); i > 1; --i)
      std::swap(bucket[i - 1], bucket[rng.below(i)]);
  std::vector<std::size_t> seed_set;
  for (std::size_t round = 0; seed_set.size() < static_cast<std::size_t>(cfg.active_seed_count);
       ++round) {
    bool any = false;
    for (const auto& bucket : buckets) {
      if (round < bucket.size() &&
          seed_set.size() < static_cast<std::size_t>(cfg.active_seed_count)) {
        seed_set.push_back(bucket[round]);
        any = true;
      }
    }
    if (!any) break;
  }
  std::sort(seed_set.begin(), seed_set.end());

  auto acquisitions = cfg.acquisitions;
  if (std::find(acquisitions.begin(), acquisitions.end(), "random") == acquisitions.end())
    acquisitions.push_back("random");  // control arm is always present

  std::vector<ActiveRound> all_rounds;
  for (const auto& name : acquisitions) {
    ActiveLoopConfig loop_cfg;
    loop_cfg.kind = acquisition_from_name(name);
    loop_cfg.batch_k = cfg.active_batch_k;
    loop_cfg.budget = cfg.active_budget;
    loop_cfg.ensemble_size = cfg.active_ensemble;
    loop_cfg.n_classes = n_classes;
    loop_cfg.seed = cfg.seed;
    auto result = active_loop(pool_z, pool_phase, pool_energy, test_z, test_phase,
                              test_energy, seed_set, loop_cfg);
    all_rounds.insert(all_rounds.end(), result.rounds.begin(), result.rounds.end());
  }

  std::ostringstream csv;
  csv << "round,labels_used,acquisition,accuracy,mae,ece\n" << std::setprecision(17);
  for (const auto& r : all_rounds)
    csv << r.round << ',' << r.labels_used << ',' << r.acquisition << ',' << r.accuracy
        << ',' << r.mae << ',' << r.ece << '\n';
  atomic_write(out_csv, csv.str());
  std::cout << csv.str();
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

int cmd_gradcheck() {
  TokenizerConfig tok;
  tok.n_qubits = 4;
  tok.max_locality = 2;
  ModelConfig mcfg;
  mcfg.d_model = 16;
  mcfg.n_layers = 1;
  mcfg.n_heads = 4;
  mcfg.token_dim = tok.token_dim();
  mcfg.n_sites = tok.n_qubits;
  mcfg.decoder_layers = 1;
  mcfg.dropout = 0.0;
  mcfg.max_seq_len = 16;
  mcfg.max_sites = 4;
  Model model(mcfg, 2024);

  const auto ham = make_tfim(4, Topology::ChainOpen, 1.0, 0.7);
  const auto seq = tokenize(ham, tok);
  const MatrixXd features = token_features(seq, tok);
  VectorXd magnitudes(static_cast<Eigen::Index>(seq.size()));
  for (std::size_t i = 0; i < seq.size(); ++i)
    magnitudes(static_cast<Eigen::Index>(i)) = seq.tokens[i].magnitude;
  const std::set<std::size_t> masked{1, 4};
  MatrixXd e_target(1, 1), c_target(1, 1);
  e_target(0, 0) = -1.2;
  c_target(0, 0) = 0.4;

  auto forward = [&] {
    auto latent = model.encode(model.embed(features, masked));
    auto rec = loss_reconstruction(model.decode_reconstruct(latent), features, masked,
                                   magnitudes, true, 1e-6);
    auto pooled = model.pool(latent);
    auto en = ag::mse(model.energy_head(pooled), e_target);
    auto corr = ag::mse(model.corr_head(pooled), c_target);
    return ag::add(ag::add(ag::scale(rec, 0.6), ag::scale(en, 0.3)), ag::scale(corr, 0.1));
  };

  model.zero_grad();
  ag::backward(forward());
  double worst = 0.0;
  std::string worst_tensor = "none";
  long checked = 0;
  for (auto& [name, p] : model.params()) {
    const MatrixXd analytic = p->grad;
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
        const double rel = std::abs(analytic(i, j) - numeric) / denom;
        if (rel > worst) {
          worst = rel;
          worst_tensor = name;
        }
        ++checked;
      }
    }
  }
  std::cout << "checked " << checked << " parameter entries; worst tensor " << worst_tensor
            << " with relative error " << worst << "\n";
  if (worst >= 1e-4)
    throw numerical_error("gradient check failed: " + worst_tensor + " relative error " +
                          std::to_string(worst));
  std::cout << "gradient check passed\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hamiltonian masked-autoencoder pipeline"};
  app.require_subcommand(0, 1);
  bool print_defaults = false;
  app.add_flag("--print-default-config", print_defaults,
               "print the default config JSON and exit");

  std::string config_path, corpus_path, out_path, ckpt_path, metrics_path, resume_path;

  auto* gen = app.add_subcommand("gen", "generate a labeled corpus");
  gen->add_option("--config", config_path, "run config JSON")->required();
  gen->add_option("--out", out_path, "corpus JSONL path")->required();

  auto* pre = app.add_subcommand("pretrain", "masked-autoencoder pretraining");
  pre->add_option("--config", config_path, "run config JSON")->required();
  pre->add_option("--corpus", corpus_path, "corpus JSONL path")->required();
  pre->add_option("--out", ckpt_path, "checkpoint output path")->required();
  pre->add_option("--metrics", metrics_path, "metrics CSV path");
  pre->add_option("--resume", resume_path, "checkpoint to resume from");

  auto* fine = app.add_subcommand("finetune", "few-shot fine-tuning and evaluation");
  fine->add_option("--config", config_path, "run config JSON")->required();
  fine->add_option("--ckpt", ckpt_path, "pretrained checkpoint")->required();
  fine->add_option("--corpus", corpus_path, "corpus JSONL path")->required();
  fine->add_option("--out", out_path, "result JSON path")->required();
  std::string ft_task;
  int ft_k = 0, ft_seeds = 0;
  bool ft_scratch = false;
  fine->add_option("--task", ft_task, "phase or energy (overrides config)");
  fine->add_option("--k", ft_k, "examples per task (overrides config)");
  fine->add_option("--seeds", ft_seeds, "evaluation seeds (overrides config)");
  fine->add_flag("--with-scratch", ft_scratch, "also evaluate a scratch-initialized encoder");

  auto* qmi_cmd = app.add_subcommand("qmi-verify", "retained-QMI comparison across strategies");
  qmi_cmd->add_option("--config", config_path, "run config JSON")->required();
  qmi_cmd->add_option("--out", out_path, "per-strategy CSV path")->required();
  std::string qmi_summary;
  qmi_cmd->add_option("--summary", qmi_summary, "summary JSON path");

  auto* compare = app.add_subcommand("mask-compare", "masking-strategy ablation table");
  compare->add_option("--config", config_path, "run config JSON")->required();
  compare->add_option("--corpus", corpus_path, "corpus JSONL path")->required();
  compare->add_option("--out", out_path, "ablation CSV path")->required();

  auto* active_cmd = app.add_subcommand("active-learn", "active-learning curves");
  active_cmd->add_option("--config", config_path, "run config JSON")->required();
  active_cmd->add_option("--ckpt", ckpt_path, "pretrained checkpoint")->required();
  active_cmd->add_option("--corpus", corpus_path, "corpus JSONL path")->required();
  active_cmd->add_option("--out", out_path, "curves CSV path")->required();

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient verification");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (print_defaults) {
      std::cout << default_config().dump(2) << "\n";
      return 0;
    }
    if (gen->parsed()) return cmd_gen(load_config(config_path), out_path);
    if (pre->parsed()) {
      if (metrics_path.empty()) metrics_path = ckpt_path + ".metrics.csv";
      return cmd_pretrain(load_config(config_path), corpus_path, ckpt_path, metrics_path,
                          resume_path);
    }
    if (fine->parsed()) {
      RunConfig cfg = load_config(config_path);
      if (!ft_task.empty()) {
        if (ft_task != "phase" && ft_task != "energy")
          throw config_error("finetune: --task must be 'phase' or 'energy'");
        cfg.task = ft_task;
      }
      if (ft_k > 0) cfg.k_shot = ft_k;
      if (ft_seeds > 0) cfg.finetune_seeds = ft_seeds;
      if (ft_scratch) cfg.with_scratch = true;
      return cmd_finetune(cfg, ckpt_path, corpus_path, out_path);
    }
    if (qmi_cmd->parsed()) {
      if (qmi_summary.empty()) qmi_summary = out_path + ".summary.json";
      return cmd_qmi_verify(load_config(config_path), out_path, qmi_summary);
    }
    if (compare->parsed())
      return cmd_mask_compare(load_config(config_path), corpus_path, out_path);
    if (active_cmd->parsed())
      return cmd_active_learn(load_config(config_path), ckpt_path, corpus_path, out_path);
    if (grad->parsed()) return cmd_gradcheck();
    std::cout << app.help();
    return 0;
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const validation_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const domain_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const shape_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const size_limit_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const numerical_error& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 3;
  } catch (const convergence_error& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 3;
  } catch (const io_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 4;
  } catch (const parse_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 4;
  } catch (const format_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
