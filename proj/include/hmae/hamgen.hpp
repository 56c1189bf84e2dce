#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hmae/pauli.hpp"

namespace hmae {

struct parse_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Family { TFIM, XXZ, XY, RandomLocal };
enum class Topology { ChainOpen, ChainPeriodic };
enum class Split { Train, Val, Test };

std::string family_name(Family f);
Family family_from_name(const std::string& name);
std::string split_name(Split s);
Split split_from_name(const std::string& name);

/// Closed parameter interval; lo == hi is a point value.
struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  Interval() = default;
  Interval(double v) : lo(v), hi(v) {}
  Interval(double l, double h) : lo(l), hi(h) {}
  bool is_point() const { return lo == hi; }
};

struct FamilySpec {
  Family family = Family::TFIM;
  int n_qubits = 4;
  Topology topology = Topology::ChainOpen;
  Interval coupling{1.0};    // J
  Interval field{0.0, 2.0};  // h (TFIM transverse field; XY longitudinal field)
  Interval anisotropy{1.0};  // XXZ Delta
  Interval gamma{0.5};       // XY anisotropy
  double noise_sigma = 0.0;
  int count = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Labels {
  double energy = 0.0;
  double energy_per_qubit = 0.0;
  int phase = 0;
  double correlation_length = 0.0;
};

struct DatasetRecord {
  Hamiltonian hamiltonian;
  Family family = Family::TFIM;
  std::map<std::string, double> params;
  Labels labels;
  Split split = Split::Train;
};

// Model builders shared with tests and the CLI.
Hamiltonian make_tfim(int n, Topology topo, double j, double h);
Hamiltonian make_xxz(int n, Topology topo, double j, double delta);
Hamiltonian make_xy(int n, Topology topo, double j, double gamma, double h);

/// Phase class for the family's documented vocabulary; nullopt when the
/// parameters sit within 1e-6 of a phase boundary.
std::optional<int> phase_label(Family f, const std::map<std::string, double>& params);

/// Deterministic given spec.seed. Coefficients optionally carry multiplicative
/// Gaussian noise; labels always come from the pre-noise Hamiltonian.
std::vector<DatasetRecord> generate(const FamilySpec& spec);

/// Stratified-by-phase shuffle split; falls back to unstratified when a
/// stratum has fewer than 3 records (reported through the return flag).
struct SplitReport {
  bool stratified = true;
};
SplitReport split_dataset(std::vector<DatasetRecord>& records,
                          std::array<double, 3> fractions, std::uint64_t seed);

void write_jsonl(const std::vector<DatasetRecord>& records, const std::string& path);
std::vector<DatasetRecord> read_jsonl(const std::string& path);

std::string record_to_json_line(const DatasetRecord& rec);
DatasetRecord record_from_json_line(const std::string& line);

}  // namespace hmae
