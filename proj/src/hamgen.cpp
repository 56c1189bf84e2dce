#include "hmae/hamgen.hpp"

#include <cmath>
#include <fstream>

#include "hmae/exact.hpp"
#include "hmae/parallel.hpp"
#include "hmae/rng.hpp"
#include "json.hpp"

namespace hmae {

namespace {

using nlohmann::json;

constexpr double kBoundaryTol = 1e-6;

PauliString one_site(int n, int i, Pauli p) {
  std::vector<Pauli> ops(n, Pauli::I);
  ops[i] = p;
  return PauliString(ops);
}

PauliString two_site(int n, int i, int j, Pauli pi, Pauli pj) {
  std::vector<Pauli> ops(n, Pauli::I);
  ops[i] = pi;
  ops[j] = pj;
  return PauliString(ops);
}

std::vector<std::pair<int, int>> chain_bonds(int n, Topology topo) {
  std::vector<std::pair<int, int>> bonds;
  for (int i = 0; i + 1 < n; ++i) bonds.emplace_back(i, i + 1);
  if (topo == Topology::ChainPeriodic && n > 2) bonds.emplace_back(0, n - 1);
  return bonds;
}

}  // namespace

std::string family_name(Family f) {
  switch (f) {
    case Family::TFIM: return "tfim";
    case Family::XXZ: return "xxz";
    case Family::XY: return "xy";
    case Family::RandomLocal: return "random_local";
  }
  return "?";
}

Family family_from_name(const std::string& name) {
  if (name == "tfim") return Family::TFIM;
  if (name == "xxz") return Family::XXZ;
  if (name == "xy") return Family::XY;
  if (name == "random_local") return Family::RandomLocal;
  throw parse_error("unknown family '" + name + "'");
}

std::string split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw parse_error("unknown split '" + name + "'");
}

void FamilySpec::validate() const {
  if (n_qubits < 2 || n_qubits > Hamiltonian::kMaxQubits)
    throw domain_error("FamilySpec: n_qubits must be in [2, 12]");
  if (count < 1) throw domain_error("FamilySpec: count must be >= 1");
  if (noise_sigma < 0.0) throw domain_error("FamilySpec: noise_sigma must be >= 0");
  for (const Interval& iv : {coupling, field, anisotropy, gamma})
    if (iv.hi < iv.lo) throw domain_error("FamilySpec: inverted parameter interval");
}

Hamiltonian make_tfim(int n, Topology topo, double j, double h) {
  std::vector<HamiltonianTerm> terms;
  for (auto [a, b] : chain_bonds(n, topo))
    terms.emplace_back(-j, two_site(n, a, b, Pauli::Z, Pauli::Z));
  for (int i = 0; i < n; ++i) terms.emplace_back(-h, one_site(n, i, Pauli::X));
  return Hamiltonian(n, terms);
}

Hamiltonian make_xxz(int n, Topology topo, double j, double delta) {
  std::vector<HamiltonianTerm> terms;
  for (auto [a, b] : chain_bonds(n, topo)) {
    terms.emplace_back(j, two_site(n, a, b, Pauli::X, Pauli::X));
    terms.emplace_back(j, two_site(n, a, b, Pauli::Y, Pauli::Y));
    terms.emplace_back(j * delta, two_site(n, a, b, Pauli::Z, Pauli::Z));
  }
  return Hamiltonian(n, terms);
}

Hamiltonian make_xy(int n, Topology topo, double j, double gamma, double h) {
  std::vector<HamiltonianTerm> terms;
  for (auto [a, b] : chain_bonds(n, topo)) {
    terms.emplace_back(-j * 0.5 * (1.0 + gamma), two_site(n, a, b, Pauli::X, Pauli::X));
    terms.emplace_back(-j * 0.5 * (1.0 - gamma), two_site(n, a, b, Pauli::Y, Pauli::Y));
  }
  for (int i = 0; i < n; ++i)
    if (h != 0.0) terms.emplace_back(-h, one_site(n, i, Pauli::Z));
  return Hamiltonian(n, terms);
}

// Phase vocabularies (documented conventions):
//   TFIM: 0 = ferromagnetic (|h/J| < 1), 1 = paramagnetic (|h/J| > 1)
//   XXZ:  0 = Ising-like (Delta > 1), 1 = XY-like (|Delta| <= 1),
//         2 = ferromagnetic (Delta < -1)
//   XY:   0 = X-ordered (gamma > 0, |h/J| < 1), 1 = Y-ordered (gamma < 0,
//         |h/J| < 1), 2 = field-polarized (|h/J| > 1)
//   RandomLocal: single class 0
std::optional<int> phase_label(Family f, const std::map<std::string, double>& params) {
  auto get = [&](const std::string& k) {
    auto it = params.find(k);
    if (it == params.end()) throw domain_error("phase_label: missing parameter " + k);
    return it->second;
  };
  switch (f) {
    case Family::TFIM: {
      const double j = get("J"), h = get("h");
      if (std::abs(j) < 1e-12) return 1;
      const double ratio = std::abs(h / j);
      if (std::abs(ratio - 1.0) < kBoundaryTol) return std::nullopt;
      return ratio < 1.0 ? 0 : 1;
    }
    case Family::XXZ: {
      const double d = get("Delta");
      if (std::abs(d - 1.0) < kBoundaryTol || std::abs(d + 1.0) < kBoundaryTol)
        return std::nullopt;
      if (d > 1.0) return 0;
      if (d < -1.0) return 2;
      return 1;
    }
    case Family::XY: {
      const double j = get("J"), g = get("gamma"), h = get("h");
      if (std::abs(g) < kBoundaryTol) return std::nullopt;
      const double ratio = std::abs(j) < 1e-12 ? 2.0 : std::abs(h / j);
      if (std::abs(ratio - 1.0) < kBoundaryTol) return std::nullopt;
      if (ratio > 1.0) return 2;
      return g > 0.0 ? 0 : 1;
    }
    case Family::RandomLocal: return 0;
  }
  return std::nullopt;
}

namespace {

struct SampledSystem {
  Hamiltonian clean;
  std::map<std::string, double> params;
  int phase;
};

SampledSystem sample_system(const FamilySpec& spec, Rng& rng) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::map<std::string, double> params;
    Hamiltonian h(spec.n_qubits, {});
    switch (spec.family) {
      case Family::TFIM: {
        params["J"] = rng.uniform(spec.coupling.lo, spec.coupling.hi);
        params["h"] = rng.uniform(spec.field.lo, spec.field.hi);
        h = make_tfim(spec.n_qubits, spec.topology, params["J"], params["h"]);
        break;
      }
      case Family::XXZ: {
        params["J"] = rng.uniform(spec.coupling.lo, spec.coupling.hi);
        params["Delta"] = rng.uniform(spec.anisotropy.lo, spec.anisotropy.hi);
        h = make_xxz(spec.n_qubits, spec.topology, params["J"], params["Delta"]);
        break;
      }
      case Family::XY: {
        params["J"] = rng.uniform(spec.coupling.lo, spec.coupling.hi);
        params["gamma"] = rng.uniform(spec.gamma.lo, spec.gamma.hi);
        params["h"] = rng.uniform(spec.field.lo, spec.field.hi);
        h = make_xy(spec.n_qubits, spec.topology, params["J"], params["gamma"], params["h"]);
        break;
      }
      case Family::RandomLocal: {
        std::vector<HamiltonianTerm> terms;
        const Pauli letters[3] = {Pauli::X, Pauli::Y, Pauli::Z};
        for (auto [a, b] : chain_bonds(spec.n_qubits, spec.topology))
          terms.emplace_back(rng.uniform(spec.coupling.lo, spec.coupling.hi),
                             two_site(spec.n_qubits, a, b, letters[rng.below(3)],
                                      letters[rng.below(3)]));
        for (int i = 0; i < spec.n_qubits; ++i)
          terms.emplace_back(rng.uniform(spec.field.lo, spec.field.hi),
                             one_site(spec.n_qubits, i, letters[rng.below(3)]));
        h = Hamiltonian(spec.n_qubits, terms);
        break;
      }
    }
    auto phase = phase_label(spec.family, params);
    if (!phase) continue;  // boundary ambiguity: resample
    if (h.n_terms() == 0) continue;
    return {std::move(h), std::move(params), *phase};
  }
  throw domain_error("generate: could not sample away from a phase boundary");
}

Hamiltonian add_noise(const Hamiltonian& clean, double sigma, Rng& rng) {
  if (sigma == 0.0) return clean;
  std::vector<HamiltonianTerm> terms;
  terms.reserve(clean.n_terms());
  for (const auto& t : clean.terms()) {
    const double c = t.coeff.real();
    terms.emplace_back(c + sigma * std::abs(c) * rng.gaussian(), t.pauli);
  }
  return Hamiltonian(clean.n_qubits(), std::move(terms));
}

}  // namespace

std::vector<DatasetRecord> generate(const FamilySpec& spec) {
  spec.validate();
  std::vector<DatasetRecord> out(static_cast<std::size_t>(spec.count));
  parallel_for(out.size(), [&](std::size_t i) {
    Rng rng(seed_mix(spec.seed, i));
    SampledSystem sys = sample_system(spec, rng);

    DatasetRecord rec;
    rec.family = spec.family;
    rec.params = sys.params;
    rec.labels.phase = sys.phase;
    rec.labels.energy = ground_state(sys.clean).energy;
    rec.labels.energy_per_qubit = rec.labels.energy / spec.n_qubits;
    rec.labels.correlation_length =
        spec.n_qubits >= 4 ? correlation_length(sys.clean).xi : 0.0;
    rec.hamiltonian = add_noise(sys.clean, spec.noise_sigma, rng);
    out[i] = std::move(rec);
  });
  return out;
}

SplitReport split_dataset(std::vector<DatasetRecord>& records,
                          std::array<double, 3> fractions, std::uint64_t seed) {
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9)
    throw domain_error("split_dataset: fractions must sum to 1");

  std::map<int, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < records.size(); ++i)
    strata[records[i].labels.phase].push_back(i);

  SplitReport report;
  for (const auto& [phase, idx] : strata)
    if (idx.size() < 3) report.stratified = false;
  if (!report.stratified) {
    strata.clear();
    for (std::size_t i = 0; i < records.size(); ++i) strata[0].push_back(i);
  }

  for (auto& [phase, idx] : strata) {
    Rng rng(seed_mix(seed, static_cast<std::uint64_t>(phase)));
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[rng.below(i)]);
    const std::size_t m = idx.size();
    const std::size_t n_train = static_cast<std::size_t>(std::floor(fractions[0] * m));
    const std::size_t n_val = static_cast<std::size_t>(std::floor(fractions[1] * m));
    for (std::size_t j = 0; j < m; ++j) {
      Split s = j < n_train ? Split::Train : (j < n_train + n_val ? Split::Val : Split::Test);
      records[idx[j]].split = s;
    }
  }
  return report;
}

std::string record_to_json_line(const DatasetRecord& rec) {
  json j;
  j["n_qubits"] = rec.hamiltonian.n_qubits();
  json terms = json::array();
  for (const auto& t : rec.hamiltonian.terms())
    terms.push_back({{"c", t.coeff.real()}, {"p", t.pauli.to_string()}});
  j["terms"] = std::move(terms);
  j["family"] = family_name(rec.family);
  j["params"] = rec.params;
  j["labels"] = {{"energy", rec.labels.energy},
                 {"phase", rec.labels.phase},
                 {"xi", rec.labels.correlation_length}};
  j["split"] = split_name(rec.split);
  return j.dump();
}

DatasetRecord record_from_json_line(const std::string& line) {
  json j = json::parse(line);
  DatasetRecord rec;
  const int n = j.at("n_qubits").get<int>();
  std::vector<HamiltonianTerm> terms;
  for (const auto& t : j.at("terms"))
    terms.emplace_back(t.at("c").get<double>(),
                       PauliString::parse(t.at("p").get<std::string>()));
  rec.hamiltonian = Hamiltonian(n, std::move(terms));
  rec.family = family_from_name(j.at("family").get<std::string>());
  for (const auto& [k, v] : j.at("params").items()) rec.params[k] = v.get<double>();
  rec.labels.energy = j.at("labels").at("energy").get<double>();
  rec.labels.energy_per_qubit = rec.labels.energy / n;
  rec.labels.phase = j.at("labels").at("phase").get<int>();
  rec.labels.correlation_length = j.at("labels").at("xi").get<double>();
  rec.split = split_from_name(j.at("split").get<std::string>());
  return rec;
}

void write_jsonl(const std::vector<DatasetRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("write_jsonl: cannot open " + path);
  for (const auto& rec : records) out << record_to_json_line(rec) << '\n';
  if (!out) throw io_error("write_jsonl: write failed for " + path);
}

std::vector<DatasetRecord> read_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("read_jsonl: cannot open " + path);
  std::vector<DatasetRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json_line(line));
    } catch (const std::exception& e) {
      throw parse_error("read_jsonl: line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace hmae
