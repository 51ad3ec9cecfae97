#include <algorithm>
#include <ostream>
#include <unordered_map>

#include "parallel.hpp"
#include "regimerag/error.hpp"
#include "regimerag/pipeline.hpp"

namespace regimerag {

namespace {

bool record_before(const DeviationRecord& a, const DeviationRecord& b) {
  if (a.time != b.time) return a.time < b.time;
  return a.device < b.device;
}

}  // namespace

std::string device_of(const HierarchicalPath& path) {
  return path.prefix(std::min<std::size_t>(2, path.depth())).str();
}

std::vector<DeviationRecord> score_flights(const Engine& engine, const KnowledgeBase& flights,
                                           std::span<const std::size_t> indices) {
  const auto& cfg = engine.config();
  std::vector<DeviationRecord> records(indices.size());
  detail::parallel_for(indices.size(), cfg.threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const RegimeSample& s = flights.sample(indices[i]);
      const Query q = engine.query_from_regime(s.values);
      const auto truth = future_target(s.values, cfg.history_len, engine.kb().schema());
      const QueryOrigin origin{s.path, std::pair{s.start_time(), s.end_time()}};
      const auto out = engine.forecast(q, origin, truth, 1);
      records[i] = DeviationRecord{device_of(s.path), s.start_time(), *out.deviation};
    }
  });
  std::stable_sort(records.begin(), records.end(), record_before);
  return records;
}

PrecursorPolicy policy_from_config(const PolicyConfig& config) {
  PrecursorPolicy p;
  p.window_seconds = config.window_days * kSecondsPerDay;
  p.frequency_threshold = config.frequency_threshold;
  p.min_window_records = config.min_window_records;
  return p;
}

std::vector<PrecursorAlert> monitor_records(std::vector<DeviationRecord> records,
                                            const PrecursorPolicy& policy) {
  std::stable_sort(records.begin(), records.end(), record_before);
  PrecursorMonitor monitor(policy);
  std::vector<PrecursorAlert> alerts;
  for (const auto& r : records) {
    if (auto a = monitor.update(r)) alerts.push_back(std::move(*a));
  }
  return alerts;
}

DetectionReport run_detection(const KnowledgeBase& kb, const KnowledgeBase& flights,
                              const std::vector<FlightLabel>& labels, const EngineConfig& config,
                              std::optional<PrecursorPolicy> policy) {
  std::unordered_map<std::string, Split> split_of;
  for (const auto& l : labels) split_of.emplace(l.path.str(), l.split);
  std::vector<std::size_t> calibration, monitored;
  for (std::size_t i = 0; i < flights.size(); ++i) {
    auto it = split_of.find(flights.sample(i).path.str());
    if (it == split_of.end()) {
      throw Error(ErrorCode::InvalidArgument,
                  "flight " + flights.sample(i).path.str() + " has no label");
    }
    if (it->second == Split::Calibration) calibration.push_back(i);
    if (it->second == Split::Query) monitored.push_back(i);
  }

  const Engine engine(kb, config);
  DetectionReport report;
  if (policy) {
    report.policy = *policy;
  } else {
    if (calibration.empty()) {
      throw Error(ErrorCode::InvalidArgument, "no calibration flights to derive a policy from");
    }
    report.calibration = score_flights(engine, flights, calibration);
    report.policy = calibrate_policy(report.calibration, policy_from_config(config.policy),
                                     config.policy.percentile, config.policy.min_device_records);
  }
  report.monitored = score_flights(engine, flights, monitored);
  report.alerts = monitor_records(report.monitored, report.policy);
  return report;
}

void write_timeline_csv(std::ostream& out, std::span<const DeviationRecord> records,
                        const PrecursorPolicy& policy) {
  out << "device,timestamp,deviation,exceeds\n";
  for (const auto& r : records) {
    out << r.device << ',' << format_exact(r.time) << ',' << format_exact(r.deviation) << ','
        << (r.deviation > policy.deviation_threshold ? 1 : 0) << '\n';
  }
}

}  // namespace regimerag
