// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include <fmt/format.h>

#include "regimerag/kb.hpp"
#include "regimerag/pipeline.hpp"
#include "regimerag/retrieval.hpp"
#include "regimerag/synth.hpp"
#include "regimerag/weighting.hpp"

using namespace regimerag;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  Matrix m(rows, cols);
  for (double& v : m.flat()) v = quantize_value(u(rng));
  return m;
}

KnowledgeBase random_kb(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  KnowledgeBase kb(VariableSchema::prsov(), kDefaultRegimeLen);
  std::vector<RegimeSample> samples;
  samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> t(kDefaultRegimeLen);
    for (std::size_t r = 0; r < t.size(); ++r) t[r] = 100.0 * static_cast<double>(i) + static_cast<double>(r);
    samples.push_back({HierarchicalPath({"G", "D" + std::to_string(i % 20), "R", "s" + std::to_string(i)}),
                       random_matrix(rng, kDefaultRegimeLen, 3), std::move(t)});
  }
  kb.ingest_batch(std::move(samples));
  return kb;
}

struct FleetData {
  KnowledgeBase kb;
  KnowledgeBase queries;
  std::vector<FlightLabel> labels;
};

FleetData fleet_data(const FleetConfig& cfg) {
  const Fleet fleet = generate_fleet(cfg);
  FleetData d{KnowledgeBase(fleet_schema(), cfg.regime_len), KnowledgeBase(fleet_schema(), cfg.regime_len), {}};
  d.kb.ingest_batch(fleet.kb_samples);
  refresh_mi_cache(d.kb);
  std::vector<RegimeSample> qs;
  for (const auto& q : fleet.queries) {
    qs.push_back(q.sample);
    d.labels.push_back({q.sample.path, q.split, q.faulty});
  }
  d.queries.ingest_batch(std::move(qs));
  return d;
}

std::string table_csv(const SuiteResult& r, const EngineConfig& c) {
  std::ostringstream os;
  write_table_csv(os, r.table, provenance_line(to_string(r.suite), c, r.queries));
  return os.str();
}

std::string detection_text(const DetectionReport& r) {
  std::ostringstream os;
  write_timeline_csv(os, r.monitored, r.policy);
  for (const auto& a : r.alerts) {
    os << a.device << ',' << format_exact(a.fired_at) << ',' << format_exact(a.window_rate) << '\n';
  }
  return os.str();
}

// 1. Two-stage retrieval agrees with the exhaustive oracle when stage 1 keeps everything.
Verdict oracle_equivalence() {
  const auto kb = random_kb(1000, 101);
  const auto view = filter_scope(kb, HierarchicalPath{});
  const auto w = weights_for_scheme(WeightingScheme::Fused, {12, 6, 0.95}, kb);
  std::mt19937_64 rng(102);
  RetrievalPlan plan;
  plan.k = 10;
  plan.stage1_multiplier = 100;  // 10 * 100 >= N
  std::size_t mismatches = 0;
  double worst = 0.0;
  const auto t0 = Clock::now();
  for (int i = 0; i < 100; ++i) {
    const Query q = query_from_regime(random_matrix(rng, 18, 3), 12, kb.schema(), kb.stats());
    const auto got = retrieve(q, view, w, plan);
    const auto want = retrieve_exhaustive_oracle(q, view, w, plan.k);
    if (got.entries.size() != want.entries.size()) {
      ++mismatches;
      continue;
    }
    for (std::size_t r = 0; r < got.entries.size(); ++r) {
      if (got.entries[r].path != want.entries[r].path) ++mismatches;
      worst = std::max(worst, std::abs(got.entries[r].stage2_distance - want.entries[r].stage2_distance));
    }
  }
  const double elapsed = seconds_since(t0);
  return {mismatches == 0 && worst <= 1e-9 && elapsed < 10.0,
          fmt::format("100 queries, {} rank mismatches, max distance gap {:.2e}, {:.2f}s", mismatches,
                      worst, elapsed)};
}

// 2. Future target cells of candidates never influence retrieval.
Verdict masking_invariance() {
  const auto kb = random_kb(1000, 201);
  const auto view = filter_scope(kb, HierarchicalPath{});
  const auto w = weights_for_scheme(WeightingScheme::Fused, {12, 6, 0.95}, kb);
  const auto base = candidates_from_view(view);
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> noise(-1e3, 1e3);
  std::vector<Matrix> perturbed;
  for (const auto& s : kb.samples()) {
    Matrix m = s.values;
    for (std::size_t r = 12; r < 18; ++r) m(r, kb.schema().target_index()) += noise(rng);
    perturbed.push_back(normalize(m, kb.stats()));
  }
  CandidateSet alt = base;
  for (std::size_t i = 0; i < alt.size(); ++i) alt.values[i] = perturbed[i].flat();

  std::size_t differences = 0;
  for (int i = 0; i < 50; ++i) {
    const Query q = query_from_regime(random_matrix(rng, 18, 3), 12, kb.schema(), kb.stats());
    const auto a = retrieve(q.normalized.flat(), base, w, {});
    const auto b = retrieve(q.normalized.flat(), alt, w, {});
    if (a.entries.size() != b.entries.size()) {
      ++differences;
      continue;
    }
    for (std::size_t r = 0; r < a.entries.size(); ++r) {
      if (a.entries[r].path != b.entries[r].path ||
          a.entries[r].stage1_score != b.entries[r].stage1_score ||
          a.entries[r].stage2_distance != b.entries[r].stage2_distance) {
        ++differences;
      }
    }
  }
  return {differences == 0, fmt::format("50 queries, {} differing entries", differences)};
}

// 3. Fused weight law and mutual-information sanity.
Verdict weighting_law() {
  std::mt19937_64 rng(301);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto schema = VariableSchema::prsov();
  double worst = 0.0;
  bool masked = true;
  for (int draw = 0; draw < 1000; ++draw) {
    const std::size_t L = 1 + rng() % 24;
    const std::size_t H = 1 + rng() % 12;
    const double lambda = std::max(u(rng), 1e-3);
    CovariateWeights cov;
    cov.weights = {1.0, u(rng), u(rng)};
    const auto fused = fuse_weights(build_point_weights({L, H, lambda}, schema, L + H), cov);
    for (std::size_t r = 0; r < L + H; ++r) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double expect =
            (r < L ? std::pow(lambda, static_cast<double>(L - 1 - r)) : (c == 0 ? 0.0 : 1.0)) *
            cov.weights[c];
        worst = std::max(worst, std::abs(fused.matrix(r, c) - expect));
        if (r >= L && c == 0 && fused.matrix(r, c) != 0.0) masked = false;
      }
    }
  }

  std::vector<double> bits(1000);
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = static_cast<double>(i % 2);
  const double ln2_gap = std::abs(estimate_mutual_information(bits, bits, 2) - std::log(2.0));

  std::normal_distribution<double> z(0.0, 1.0);
  double asymmetry = 0.0, minimum = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 50 + rng() % 500;
    const std::size_t bins = 2 + rng() % 8;
    const double coupling = z(rng);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = z(rng);
      y[i] = coupling * x[i] + z(rng);
    }
    const double xy = estimate_mutual_information(x, y, bins);
    const double yx = estimate_mutual_information(y, x, bins);
    asymmetry = std::max(asymmetry, std::abs(xy - yx));
    minimum = std::min(minimum, xy);
  }
  return {worst <= 1e-15 && masked && ln2_gap <= 1e-9 && asymmetry <= 1e-12 && minimum >= 0.0,
          fmt::format("law gap {:.1e} over 1000 draws, MI(x;x)-ln2 {:.1e}, asymmetry {:.1e}, min MI {:.1e}",
                      worst, ln2_gap, asymmetry, minimum)};
}

// 4. Weighting suite on the default fleet.
Verdict weighting_suite(const SuiteResult& r) {
  const auto& t = r.table;
  const double k0 = t.cell("k=0", "fused_mse");
  const double dyn = t.cell("dynamic", "fused_mse");
  const double uniform_dyn = t.cell("dynamic", "uniform_mse");
  double best_fixed = std::numeric_limits<double>::infinity();
  for (const char* label : {"k=1", "k=2", "k=3", "k=6", "k=9", "k=12"}) {
    best_fixed = std::min(best_fixed, t.cell(label, "fused_mse"));
  }
  return {dyn < k0 && dyn <= uniform_dyn && dyn <= 1.05 * best_fixed,
          fmt::format("dynamic {:.6f} vs k=0 {:.6f}, uniform {:.6f}, best fixed {:.6f} (x1.05 = {:.6f})",
                      dyn, k0, uniform_dyn, best_fixed, 1.05 * best_fixed)};
}

// 5. Covariate suite on the default fleet.
Verdict covariate_suite(const SuiteResult& r) {
  const auto& t = r.table;
  const double none = t.cell("none", "mse"), full = t.cell("full", "mse");
  const double ip = t.cell("only-IP", "mse"), n2 = t.cell("only-N2", "mse");
  return {full < none && ip <= n2,
          fmt::format("full {:.6f} < none {:.6f}; only-IP {:.6f} <= only-N2 {:.6f}", full, none, ip, n2)};
}

// 6. Precursor detection on a fleet with three faulty planes.
Verdict detection(const DetectionReport& report, const FleetConfig& cfg) {
  const FaultSpec& f = *cfg.fault;
  const double query_start = cfg.kb_start + cfg.kb_days * kSecondsPerDay;
  const double lo = query_start + f.onset_day * kSecondsPerDay;
  const double hi = lo + f.duration_days * kSecondsPerDay;
  std::vector<std::string> faulty;
  for (std::size_t p : f.planes) faulty.push_back(cfg.group + "/" + plane_name(p));
  std::size_t detected = 0, false_alerts = 0;
  for (const auto& dev : faulty) {
    const bool hit = std::any_of(report.alerts.begin(), report.alerts.end(), [&](const PrecursorAlert& a) {
      return a.device == dev && a.fired_at >= lo && a.fired_at < hi;
    });
    if (hit) ++detected;
  }
  for (const auto& a : report.alerts) {
    if (std::find(faulty.begin(), faulty.end(), a.device) == faulty.end()) ++false_alerts;
  }
  return {detected == faulty.size() && false_alerts == 0,
          fmt::format("{}/{} faulty planes alerted in the fault window, {} alerts on healthy planes",
                      detected, faulty.size(), false_alerts)};
}

// 8. Scale: 100k-candidate retrieval time and store round trip.
Verdict scale() {
  const auto t_build = Clock::now();
  const auto kb = random_kb(100000, 801);
  const double build_s = seconds_since(t_build);
  const auto view = filter_scope(kb, HierarchicalPath{});
  const auto w = weights_for_scheme(WeightingScheme::Fused, {12, 6, 0.95}, kb);
  std::mt19937_64 rng(802);
  const Query q = query_from_regime(random_matrix(rng, 18, 3), 12, kb.schema(), kb.stats());
  (void)retrieve(q, view, w, {});  // warm caches
  double slowest = 0.0;
  for (int i = 0; i < 3; ++i) {
    const auto t0 = Clock::now();
    (void)retrieve(q, view, w, {});
    slowest = std::max(slowest, seconds_since(t0));
  }

  const fs::path dir = fs::temp_directory_path() / ("regimerag_accept_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  save_kb(kb, dir);
  const auto back = load_kb(dir);
  fs::remove_all(dir);
  bool same = back.size() == kb.size();
  for (std::size_t i = 0; same && i < kb.size(); ++i) {
    const auto& a = kb.sample(i);
    const RegimeSample* b = back.find(a.path);
    same = b && b->values.flat().size() == a.values.flat().size() &&
           std::equal(a.values.flat().begin(), a.values.flat().end(), b->values.flat().begin()) &&
           b->timestamps == a.timestamps;
  }
  same = same && back.stats().mean == kb.stats().mean && back.stats().stddev == kb.stats().stddev;
  return {slowest < 1.0 && same,
          fmt::format("retrieval over 100000 candidates {:.3f}s single-threaded (kb build {:.1f}s), "
                      "save/load round trip {}",
                      slowest, build_s, same ? "exact" : "differs")};
}

}  // namespace

int main() {
  int failed = 0;
  const auto report = [&](int n, const char* what, const std::function<Verdict()>& check) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    if (!v.pass) ++failed;
    std::printf("%s criterion %d: %s (%s)\n", v.pass ? "PASS" : "FAIL", n, what, v.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "two-stage retrieval matches the exhaustive oracle", oracle_equivalence);
  report(2, "future target cells never affect retrieval", masking_invariance);
  report(3, "fused weight law and mutual-information properties", weighting_law);

  FleetConfig fleet_cfg;  // defaults, seed 42
  const FleetData fleet = fleet_data(fleet_cfg);
  EngineConfig cfg;
  cfg.seed = 42;
  cfg.eval_queries = 200;
  cfg.threads = 1;
  std::optional<SuiteResult> weighting_1, covariate_1;
  report(4, "weighting suite ordering on the default fleet", [&] {
    weighting_1 = run_suite(Suite::Weighting, fleet.kb, fleet.queries, &fleet.labels, cfg);
    return weighting_suite(*weighting_1);
  });
  report(5, "covariate suite ordering on the default fleet", [&] {
    covariate_1 = run_suite(Suite::Covariate, fleet.kb, fleet.queries, &fleet.labels, cfg);
    return covariate_suite(*covariate_1);
  });

  FleetConfig fault_cfg;
  FaultSpec fault;
  fault.planes = pick_fault_planes(fault_cfg.seed, fault_cfg.planes, 3);
  fault.intermittency = 0.5;
  fault.magnitude = 1.5;
  fault_cfg.fault = fault;
  const FleetData faulty = fleet_data(fault_cfg);
  std::optional<DetectionReport> detect_1;
  report(6, "precursor alerts on exactly the faulty planes", [&] {
    detect_1 = run_detection(faulty.kb, faulty.queries, faulty.labels, cfg);
    return detection(*detect_1, fault_cfg);
  });

  report(7, "results independent of the thread count", [&] {
    if (!weighting_1 || !covariate_1 || !detect_1) return Verdict{false, "earlier criteria did not run"};
    EngineConfig many = cfg;
    many.threads = 4;
    const auto w = run_suite(Suite::Weighting, fleet.kb, fleet.queries, &fleet.labels, many);
    const auto c = run_suite(Suite::Covariate, fleet.kb, fleet.queries, &fleet.labels, many);
    const auto d = run_detection(faulty.kb, faulty.queries, faulty.labels, many);
    const bool w_same = table_csv(w, cfg) == table_csv(*weighting_1, cfg);
    const bool c_same = table_csv(c, cfg) == table_csv(*covariate_1, cfg);
    const bool d_same = detection_text(d) == detection_text(*detect_1);
    return Verdict{w_same && c_same && d_same,
                   fmt::format("threads 1 vs 4: weighting {}, covariate {}, detection {}",
                               w_same ? "identical" : "differs", c_same ? "identical" : "differs",
                               d_same ? "identical" : "differs")};
  });

  report(8, "100k-candidate retrieval under one second and exact store round trip", scale);

  std::printf("%s: %d of 8 criteria failed\n", failed ? "FAIL" : "PASS", failed);
  return failed ? 1 : 0;
}
