#include "regimerag/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "regimerag/error.hpp"
#include "regimerag/maintenance.hpp"
#include "regimerag/weighting.hpp"

namespace regimerag {

double PortableRng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double PortableRng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double PortableRng::normal() {
  if (spare_) {
    const double v = *spare_;
    spare_.reset();
    return v;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  return r * std::cos(theta);
}

std::size_t PortableRng::below(std::size_t n) {
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "below(0)");
  return static_cast<std::size_t>(uniform() * static_cast<double>(n));
}

std::uint64_t PortableRng::splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t PortableRng::derive(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x5851f42d4c957f2dULL));
}

void FleetConfig::validate() const {
  const auto bad = [](const std::string& why) { return Error(ErrorCode::InvalidConfig, why); };
  if (planes == 0) throw bad("planes must be positive");
  if (min_flights == 0 || max_flights < min_flights) throw bad("need 0 < min_flights <= max_flights");
  if (regime_len < 4) throw bad("regime_len must be at least 4");
  if (!(sample_interval > 0.0)) throw bad("sample_interval must be positive");
  if (!(kb_days > 0.0) || query_days < 0.0 || !(query_flights_per_day > 0.0)) {
    throw bad("invalid period lengths");
  }
  if (calibration_days < 0.0 || calibration_days > query_days) {
    throw bad("calibration period must lie within the query period");
  }
  if (noise_mp < 0.0 || noise_ip < 0.0 || noise_n2 < 0.0) throw bad("noise_std must be >= 0");
  if (fault) {
    for (std::size_t p : fault->planes) {
      if (p >= planes) throw bad("fault plane index out of range");
    }
    if (fault->onset_day < calibration_days) {
      throw bad("fault onset must follow the healthy calibration period");
    }
    if (!(fault->intermittency >= 0.0 && fault->intermittency <= 1.0)) {
      throw bad("intermittency must lie in [0, 1]");
    }
    if (!(fault->duration_days > 0.0)) throw bad("fault duration must be positive");
    if (fault->first_row >= regime_len) throw bad("fault first_row beyond regime");
  }
}

VariableSchema fleet_schema() { return VariableSchema::prsov(); }

std::string plane_name(std::size_t plane) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "B-2%03zu", plane + 1);
  return buf;
}

double healthy_mp(const Coupling& c, double ip, double n2) {
  return std::min(c.a * ip + c.b * n2, c.setpoint);
}

namespace {

constexpr double kIpMax = 60.0;
constexpr double kIpN2Offset = 50.0;
constexpr double kIpN2Scale = 20.0;

double value_out(const FleetConfig& cfg, double v) { return cfg.quantize ? quantize_value(v) : v; }

// One takeoff regulation cycle. Column order matches fleet_schema(): MP, IP, N2.
Matrix simulate_regime(const FleetConfig& cfg, PortableRng& rng, double fault_offset,
                       std::size_t fault_row) {
  const double n2_idle = rng.uniform(58.0, 66.0);
  const double n2_max = rng.uniform(92.0, 102.0);
  const double center = rng.uniform(0.4, 0.8) * static_cast<double>(cfg.regime_len);
  const double steepness = rng.uniform(0.8, 2.0);
  const double gain = rng.uniform(0.85, 1.15);

  Matrix m(cfg.regime_len, 3);
  for (std::size_t r = 0; r < cfg.regime_len; ++r) {
    const double t = static_cast<double>(r);
    const double n2 = n2_idle + (n2_max - n2_idle) / (1.0 + std::exp(-(t - center) / steepness));
    const double ip = gain * kIpMax * (1.0 - std::exp(-(n2 - kIpN2Offset) / kIpN2Scale));
    double mp = healthy_mp(cfg.coupling, ip, n2);
    if (r >= fault_row) mp += fault_offset;
    m(r, 0) = value_out(cfg, mp + cfg.noise_mp * rng.normal());
    m(r, 1) = value_out(cfg, ip + cfg.noise_ip * rng.normal());
    m(r, 2) = value_out(cfg, n2 + cfg.noise_n2 * rng.normal());
  }
  return m;
}

std::vector<double> regime_times(const FleetConfig& cfg, double start) {
  std::vector<double> ts(cfg.regime_len);
  for (std::size_t r = 0; r < cfg.regime_len; ++r) {
    ts[r] = start + static_cast<double>(r) * cfg.sample_interval;
  }
  return ts;
}

HierarchicalPath flight_path(const FleetConfig& cfg, std::size_t plane, char kind,
                             std::size_t index) {
  char id[32];
  std::snprintf(id, sizeof id, "%c%06zu", kind, index);
  return HierarchicalPath({cfg.group, plane_name(plane), cfg.regime, id});
}

// Each calendar day inside the fault window gets floor(p * n) faulty flights
// plus one more with probability frac(p * n), chosen at random among its n
// flights. Every flight is faulty with probability p, and the daily count
// varies by at most one.
void mark_faulty(const FaultSpec& fault, const std::vector<double>& starts, double query_start,
                 PortableRng& rng, std::vector<bool>& faulty) {
  const double day = kSecondsPerDay;
  std::size_t i = 0;
  while (i < starts.size()) {
    const double d = std::floor((starts[i] - query_start) / day);
    std::size_t j = i;
    while (j < starts.size() && std::floor((starts[j] - query_start) / day) == d) ++j;
    if (d >= fault.onset_day && d < fault.onset_day + fault.duration_days) {
      std::vector<std::size_t> members;
      for (std::size_t m = i; m < j; ++m) members.push_back(m);
      const double expected = fault.intermittency * static_cast<double>(members.size());
      auto count = static_cast<std::size_t>(std::floor(expected));
      if (rng.uniform() < expected - static_cast<double>(count)) ++count;
      for (std::size_t c = 0; c < count; ++c) {
        const std::size_t pick = c + rng.below(members.size() - c);
        std::swap(members[c], members[pick]);
        faulty[members[c]] = true;
      }
    }
    i = j;
  }
}

}  // namespace

std::vector<std::size_t> pick_fault_planes(std::uint64_t seed, std::size_t planes,
                                           std::size_t count) {
  if (count > planes) throw Error(ErrorCode::InvalidConfig, "more fault planes than planes");
  std::vector<std::size_t> all(planes);
  for (std::size_t i = 0; i < planes; ++i) all[i] = i;
  PortableRng rng(PortableRng::derive(seed, 0x6661756c74ULL));
  for (std::size_t i = 0; i < count; ++i) std::swap(all[i], all[i + rng.below(planes - i)]);
  all.resize(count);
  std::sort(all.begin(), all.end());
  return all;
}

Fleet generate_fleet(const FleetConfig& cfg) {
  cfg.validate();
  Fleet fleet;
  const double day = kSecondsPerDay;
  const double query_start = cfg.kb_start + cfg.kb_days * day;
  const double log_lo = std::log(static_cast<double>(cfg.min_flights));
  const double log_hi = std::log(static_cast<double>(cfg.max_flights));
  const auto query_count =
      static_cast<std::size_t>(std::floor(cfg.query_days * cfg.query_flights_per_day));

  for (std::size_t p = 0; p < cfg.planes; ++p) {
    PortableRng rng(PortableRng::derive(cfg.seed, p));
    const auto flights = std::min<std::size_t>(
        cfg.max_flights,
        static_cast<std::size_t>(std::llround(std::exp(rng.uniform(log_lo, log_hi)))));
    const double slot = cfg.kb_days * day / static_cast<double>(flights);
    for (std::size_t f = 0; f < flights; ++f) {
      const double start = std::floor(cfg.kb_start + (static_cast<double>(f) + rng.uniform(0.0, 0.5)) * slot);
      fleet.kb_samples.push_back(RegimeSample{flight_path(cfg, p, 'f', f),
                                              simulate_regime(cfg, rng, 0.0, cfg.regime_len),
                                              regime_times(cfg, start)});
    }

    const bool fault_plane =
        cfg.fault && std::find(cfg.fault->planes.begin(), cfg.fault->planes.end(), p) !=
                         cfg.fault->planes.end();
    const double qslot = day / cfg.query_flights_per_day;
    std::vector<double> starts(query_count);
    for (std::size_t q = 0; q < query_count; ++q) {
      const double offset = (static_cast<double>(q) + rng.uniform(0.0, 0.5)) * qslot;
      starts[q] = std::floor(query_start + offset);
    }
    std::vector<bool> faulty(query_count, false);
    if (fault_plane) mark_faulty(*cfg.fault, starts, query_start, rng, faulty);

    for (std::size_t q = 0; q < query_count; ++q) {
      const double day_index = (starts[q] - query_start) / day;
      LabeledFlight lf;
      lf.sample = RegimeSample{
          flight_path(cfg, p, 'q', q),
          simulate_regime(cfg, rng, faulty[q] ? cfg.fault->magnitude : 0.0,
                          faulty[q] ? cfg.fault->first_row : cfg.regime_len),
          regime_times(cfg, starts[q])};
      lf.plane = p;
      lf.split = day_index < cfg.calibration_days ? Split::Calibration : Split::Query;
      lf.faulty = faulty[q];
      lf.day = day_index;
      fleet.queries.push_back(std::move(lf));
    }
  }
  return fleet;
}

std::string_view to_string(Split s) noexcept {
  switch (s) {
    case Split::KnowledgeBase: return "kb";
    case Split::Calibration: return "calibration";
    case Split::Query: return "query";
  }
  return "query";
}

void write_fleet(const Fleet& fleet, const FleetConfig& config, const std::filesystem::path& out) {
  const VariableSchema schema = fleet_schema();
  KnowledgeBase kb(schema, config.regime_len);
  kb.ingest_batch(fleet.kb_samples);
  refresh_mi_cache(kb);
  save_kb(kb, out / "kb");

  KnowledgeBase queries(schema, config.regime_len);
  std::vector<RegimeSample> qs;
  qs.reserve(fleet.queries.size());
  for (const auto& q : fleet.queries) qs.push_back(q.sample);
  queries.ingest_batch(std::move(qs));
  save_kb(queries, out / "queries");

  std::ofstream labels(out / "labels.csv");
  if (!labels) throw Error(ErrorCode::Io, "cannot write labels.csv");
  labels << "path,split,label\n";
  for (const auto& s : fleet.kb_samples) labels << s.path.str() << ",kb,healthy\n";
  for (const auto& q : fleet.queries) {
    labels << q.sample.path.str() << ',' << to_string(q.split) << ','
           << (q.faulty ? "faulty" : "healthy") << '\n';
  }
}

std::vector<FlightLabel> read_labels(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + file.string());
  std::vector<FlightLabel> out;
  std::string line;
  std::getline(in, line);
  if (line != "path,split,label") throw Error(ErrorCode::InvalidArgument, "bad labels header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
      throw Error(ErrorCode::InvalidArgument, "bad labels line '" + line + "'");
    }
    FlightLabel l;
    l.path = HierarchicalPath::parse(line.substr(0, c1));
    const std::string split = line.substr(c1 + 1, c2 - c1 - 1);
    l.split = split == "kb" ? Split::KnowledgeBase
              : split == "calibration" ? Split::Calibration
                                       : Split::Query;
    l.faulty = line.substr(c2 + 1) == "faulty";
    out.push_back(std::move(l));
  }
  return out;
}

}  // namespace regimerag
