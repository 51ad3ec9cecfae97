#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "regimerag/kb.hpp"

namespace regimerag {

/// MT19937-64 seeded through SplitMix64, with distribution code written out
/// here (53-bit uniforms, Box-Muller normals) so any language can reproduce
/// a fleet bit for bit from the same seed.
class PortableRng {
 public:
  explicit PortableRng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform();                    // [0, 1)
  double uniform(double lo, double hi);
  double normal();                     // standard normal
  std::size_t below(std::size_t n);    // [0, n)

  static std::uint64_t splitmix64(std::uint64_t x);
  /// Independent stream for `(seed, index)`.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t index);

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

struct Coupling {
  double a = 0.8;          // MP per psi of IP
  double b = 0.1;          // MP per %RPM of N2
  double setpoint = 42.0;  // regulated MP ceiling
};

struct FaultSpec {
  std::vector<std::size_t> planes;  // plane indices
  double onset_day = 20.0;          // days after the query period starts
  double duration_days = 10.0;
  double intermittency = 0.5;       // per-flight probability inside the window
  double magnitude = 1.5;           // MP offset (psi) on faulty flights
  std::size_t first_row = 12;       // rows [first_row, regime_len) are affected
};

struct FleetConfig {
  std::uint64_t seed = 42;
  std::string group = "B777";
  std::string regime = "PRSOV-L";
  std::size_t planes = 30;
  std::size_t min_flights = 91;    // KB flights per plane, sampled log-uniformly
  std::size_t max_flights = 1050;
  std::size_t regime_len = kDefaultRegimeLen;
  double sample_interval = 1.0;    // seconds between regime rows
  double kb_start = 1672531200.0;  // 2023-01-01T00:00:00Z
  double kb_days = 730.0;
  double query_days = 45.0;
  double query_flights_per_day = 4.0;
  double calibration_days = 14.0;  // leading healthy part of the query period
  double noise_mp = 0.3;
  double noise_ip = 0.3;
  double noise_n2 = 0.2;
  Coupling coupling;
  std::optional<FaultSpec> fault;
  bool quantize = true;  // round values to the 9-significant-digit store format

  void validate() const;
};

enum class Split { KnowledgeBase, Calibration, Query };

struct LabeledFlight {
  RegimeSample sample;
  std::size_t plane = 0;
  Split split = Split::Query;
  bool faulty = false;
  double day = 0.0;  // days since the query period started
};

struct Fleet {
  std::vector<RegimeSample> kb_samples;
  std::vector<LabeledFlight> queries;  // calibration + query splits, per plane in time order
};

VariableSchema fleet_schema();
std::string plane_name(std::size_t plane);

/// Closed-form healthy manifold pressure.
double healthy_mp(const Coupling& c, double ip, double n2);

/// `count` distinct plane indices drawn from [0, planes) with a seeded
/// generator, sorted ascending.
std::vector<std::size_t> pick_fault_planes(std::uint64_t seed, std::size_t planes,
                                           std::size_t count);

Fleet generate_fleet(const FleetConfig& config);

/// Writes <out>/kb and <out>/queries stores plus <out>/labels.csv
/// (path,split,label).
void write_fleet(const Fleet& fleet, const FleetConfig& config, const std::filesystem::path& out);

struct FlightLabel {
  HierarchicalPath path;
  Split split = Split::Query;
  bool faulty = false;
};

std::vector<FlightLabel> read_labels(const std::filesystem::path& file);
std::string_view to_string(Split s) noexcept;

}  // namespace regimerag
