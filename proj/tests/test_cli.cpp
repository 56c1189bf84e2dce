#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args, const fs::path& dir) {
  const fs::path out_file = dir / "cli_output.txt";
  const std::string cmd = "cd " + dir.string() + " && " + HMAE_CLI_PATH + " " + args + " > " +
                          out_file.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult result;
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out_file);
  std::ostringstream ss;
  ss << in.rdbuf();
  result.output = ss.str();
  return result;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("hmae_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json tiny_config() {
  json cfg = {
      {"seed", 11},
      {"families", json::array({json{{"family", "tfim"},
                                     {"n_qubits", 4},
                                     {"field", {0.2, 2.0}},
                                     {"count", 40}}})},
      {"model",
       json{{"d_model", 16}, {"n_layers", 1}, {"n_heads", 4}, {"decoder_layers", 1}}},
      {"train", json{{"lr", 1e-3}, {"batch_size", 4}, {"total_steps", 10}}},
      {"finetune", json{{"task", "phase"}, {"k", 5}, {"seeds", 2}}},
      {"qmi_verify",
       json{{"count", 4}, {"n_min", 4}, {"n_max", 4}, {"samples", 2},
            {"strategies", {"random", "practical"}}}},
      {"mask_compare",
       json{{"strategies", {"random", "practical"}}, {"reference", "practical"},
            {"seeds", 3}}},
      {"active",
       json{{"acquisitions", json::array({"entropy"})}, {"batch_k", 4}, {"budget", 16},
            {"seed_count", 8}}},
  };
  return cfg;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  out << j.dump(2) << "\n";
}

int line_count(const std::string& text) {
  int n = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++n;
  return n;
}

}  // namespace

TEST_CASE("default config prints valid json and matches the parser") {
  auto dir = fresh_dir("defaults");
  auto run = run_cli("--print-default-config", dir);
  CHECK(run.exit_code == 0);
  const json cfg = json::parse(run.output);
  CHECK(cfg.contains("seed"));
  CHECK(cfg.contains("strategy"));
  CHECK(cfg["train"]["lambda"] == json({0.6, 0.3, 0.1}));

  // the printed defaults are themselves an accepted config
  write_json(dir / "cfg.json", cfg);
  auto gen = run_cli("gen --config cfg.json --out corpus.jsonl", dir);
  CHECK(gen.exit_code == 0);
}

TEST_CASE("unknown config keys and invalid families exit with code 2") {
  auto dir = fresh_dir("badcfg");
  json cfg = tiny_config();
  cfg["surprise"] = 1;
  write_json(dir / "bad.json", cfg);
  auto run = run_cli("gen --config bad.json --out corpus.jsonl", dir);
  CHECK(run.exit_code == 2);
  CHECK(run.output.find("surprise") != std::string::npos);

  json cfg2 = tiny_config();
  cfg2["families"][0]["family"] = "heisenbug";
  write_json(dir / "bad2.json", cfg2);
  auto run2 = run_cli("gen --config bad2.json --out corpus.jsonl", dir);
  CHECK(run2.exit_code == 2);
  CHECK(run2.output.find("heisenbug") != std::string::npos);

  auto run3 = run_cli("gen --config does_not_exist.json --out corpus.jsonl", dir);
  CHECK(run3.exit_code == 2);
}

TEST_CASE("gen is deterministic and the manifest matches the file") {
  auto dir = fresh_dir("gen");
  write_json(dir / "cfg.json", tiny_config());
  auto a = run_cli("gen --config cfg.json --out a.jsonl", dir);
  auto b = run_cli("gen --config cfg.json --out b.jsonl", dir);
  REQUIRE(a.exit_code == 0);
  REQUIRE(b.exit_code == 0);
  CHECK(slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl"));

  const json ma = json::parse(slurp(dir / "a.jsonl.manifest.json"));
  const json mb = json::parse(slurp(dir / "b.jsonl.manifest.json"));
  CHECK(ma["content_hash"] == mb["content_hash"]);
  CHECK(ma["total"] == 40);
  int counted = 0;
  for (const auto& [fam, splits] : ma["counts"].items())
    for (const auto& [split, n] : splits.items()) counted += n.get<int>();
  CHECK(counted == 40);
  CHECK(line_count(slurp(dir / "a.jsonl")) == 40);
}

TEST_CASE("pretrain writes checkpoint and per-step metrics, and resume matches") {
  auto dir = fresh_dir("pretrain");
  write_json(dir / "cfg.json", tiny_config());
  REQUIRE(run_cli("gen --config cfg.json --out corpus.jsonl", dir).exit_code == 0);

  auto full = run_cli("pretrain --config cfg.json --corpus corpus.jsonl --out full.ckpt", dir);
  REQUIRE(full.exit_code == 0);
  const std::string metrics = slurp(dir / "full.ckpt.metrics.csv");
  CHECK(line_count(metrics) == 11);  // header + one row per step

  // a repeat run reproduces the metrics and checkpoint byte for byte
  REQUIRE(run_cli("pretrain --config cfg.json --corpus corpus.jsonl --out again.ckpt", dir)
              .exit_code == 0);
  CHECK(slurp(dir / "again.ckpt.metrics.csv") == metrics);
  CHECK(slurp(dir / "again.ckpt") == slurp(dir / "full.ckpt"));

  // resuming a shorter run continues under the longer schedule
  json half_cfg = tiny_config();
  half_cfg["train"]["total_steps"] = 5;
  write_json(dir / "half.json", half_cfg);
  REQUIRE(run_cli("pretrain --config half.json --corpus corpus.jsonl --out half.ckpt", dir)
              .exit_code == 0);
  auto resumed = run_cli(
      "pretrain --config cfg.json --corpus corpus.jsonl --out resumed.ckpt --resume half.ckpt",
      dir);
  REQUIRE(resumed.exit_code == 0);
  std::istringstream full_csv(metrics);
  std::istringstream tail_csv(slurp(dir / "resumed.ckpt.metrics.csv"));
  std::vector<std::string> full_lines, tail_lines;
  std::string line;
  while (std::getline(full_csv, line)) full_lines.push_back(line);
  while (std::getline(tail_csv, line)) tail_lines.push_back(line);
  REQUIRE(tail_lines.size() == 6);  // header + steps 5..9
  for (std::size_t i = 0; i < 5; ++i) {
    // step index and learning rate follow the 10 step schedule
    const auto& got = tail_lines[1 + i];
    const auto& want = full_lines[6 + i];
    CHECK(got.substr(0, got.find(',', got.find(',') + 1)) ==
          want.substr(0, want.find(',', want.find(',') + 1)));
  }
}

TEST_CASE("finetune emits the fixed json schema") {
  auto dir = fresh_dir("finetune");
  write_json(dir / "cfg.json", tiny_config());
  REQUIRE(run_cli("gen --config cfg.json --out corpus.jsonl", dir).exit_code == 0);
  REQUIRE(run_cli("pretrain --config cfg.json --corpus corpus.jsonl --out m.ckpt", dir)
              .exit_code == 0);
  auto run = run_cli(
      "finetune --config cfg.json --ckpt m.ckpt --corpus corpus.jsonl --out ft.json", dir);
  REQUIRE(run.exit_code == 0);
  const json result = json::parse(slurp(dir / "ft.json"));
  CHECK(result["task"] == "phase");
  CHECK(result["k"] == 5);
  CHECK(result["seeds"] == 2);
  CHECK(result["pretrained"].contains("accuracy_mean"));
  CHECK(result["pretrained"].contains("f1_std"));
  CHECK(result.contains("majority_accuracy"));
  CHECK(!result.contains("scratch"));

  // command-line overrides take precedence over the config file
  auto run2 = run_cli(
      "finetune --config cfg.json --task energy --k 4 --with-scratch "
      "--ckpt m.ckpt --corpus corpus.jsonl --out fte.json",
      dir);
  REQUIRE(run2.exit_code == 0);
  const json result2 = json::parse(slurp(dir / "fte.json"));
  CHECK(result2["task"] == "energy");
  CHECK(result2["k"] == 4);
  CHECK(result2["pretrained"].contains("mae_mean"));
  CHECK(result2["pretrained"].contains("r2_mean"));
  CHECK(result2.contains("scratch"));

  auto missing = run_cli(
      "finetune --config cfg.json --ckpt nope.ckpt --corpus corpus.jsonl --out x.json", dir);
  CHECK(missing.exit_code == 4);
}

TEST_CASE("qmi-verify emits fixed columns and non-negative values") {
  auto dir = fresh_dir("qmi");
  write_json(dir / "cfg.json", tiny_config());
  auto run = run_cli("qmi-verify --config cfg.json --out qmi.csv", dir);
  REQUIRE(run.exit_code == 0);
  std::istringstream csv(slurp(dir / "qmi.csv"));
  std::string header;
  std::getline(csv, header);
  CHECK(header == "index,n_qubits,strategy,retained_qmi_bits");
  std::string line;
  int rows = 0;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    ++rows;
    const auto last_comma = line.rfind(',');
    CHECK(std::stod(line.substr(last_comma + 1)) >= 0.0);
  }
  CHECK(rows == 8);  // 4 Hamiltonians x 2 strategies
  const json summary = json::parse(slurp(dir / "qmi.csv.summary.json"));
  CHECK(summary["mean_retained_qmi_bits"].contains("random"));
  CHECK(summary["sign_test_p_vs_random"].contains("practical"));
}

TEST_CASE("mask-compare emits one row per strategy with zero-delta reference") {
  auto dir = fresh_dir("compare");
  write_json(dir / "cfg.json", tiny_config());
  REQUIRE(run_cli("gen --config cfg.json --out corpus.jsonl", dir).exit_code == 0);
  auto run = run_cli("mask-compare --config cfg.json --corpus corpus.jsonl --out mc.csv", dir);
  REQUIRE(run.exit_code == 0);
  std::istringstream csv(slurp(dir / "mc.csv"));
  std::string header;
  std::getline(csv, header);
  CHECK(header == "strategy,seeds,mean_accuracy,delta_accuracy,mean_mae,delta_mae");
  std::string line;
  int rows = 0;
  bool saw_reference = false;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    ++rows;
    if (line.rfind("practical,", 0) == 0) {
      saw_reference = true;
      std::istringstream fields(line);
      std::string cell;
      std::vector<std::string> cells;
      while (std::getline(fields, cell, ',')) cells.push_back(cell);
      CHECK(std::stod(cells[3]) == 0.0);
      CHECK(std::stod(cells[5]) == 0.0);
    }
  }
  CHECK(rows == 2);
  CHECK(saw_reference);

  json bad = tiny_config();
  bad["mask_compare"]["seeds"] = 2;
  write_json(dir / "bad.json", bad);
  CHECK(run_cli("mask-compare --config bad.json --corpus corpus.jsonl --out mc2.csv", dir)
            .exit_code == 2);
}

TEST_CASE("active-learn always includes the random control and respects budget") {
  auto dir = fresh_dir("active");
  write_json(dir / "cfg.json", tiny_config());
  REQUIRE(run_cli("gen --config cfg.json --out corpus.jsonl", dir).exit_code == 0);
  REQUIRE(run_cli("pretrain --config cfg.json --corpus corpus.jsonl --out m.ckpt", dir)
              .exit_code == 0);
  auto run = run_cli(
      "active-learn --config cfg.json --ckpt m.ckpt --corpus corpus.jsonl --out al.csv", dir);
  REQUIRE(run.exit_code == 0);
  std::istringstream csv(slurp(dir / "al.csv"));
  std::string header;
  std::getline(csv, header);
  CHECK(header == "round,labels_used,acquisition,accuracy,mae,ece");
  bool saw_random = false, saw_entropy = false;
  std::string line;
  int max_labels = 0, prev_labels = 0;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(fields, cell, ',')) cells.push_back(cell);
    if (cells[2] == "random") saw_random = true;
    if (cells[2] == "entropy") saw_entropy = true;
    const int labels = std::stoi(cells[1]);
    if (std::stoi(cells[0]) > 0)
      CHECK(labels - prev_labels == 4);  // k per round within an arm
    prev_labels = labels;
    max_labels = std::max(max_labels, labels);
  }
  CHECK(saw_random);
  CHECK(saw_entropy);
  CHECK(max_labels == 16);  // budget respected
}

TEST_CASE("gradcheck passes and reports the worst tensor") {
  auto dir = fresh_dir("gradcheck");
  auto run = run_cli("gradcheck", dir);
  CHECK(run.exit_code == 0);
  CHECK(run.output.find("worst tensor") != std::string::npos);
  CHECK(run.output.find("passed") != std::string::npos);

  auto rerun = run_cli("gradcheck", dir);
  CHECK(rerun.output == run.output);  // deterministic
}
