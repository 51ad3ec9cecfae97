#include "regimerag/maintenance.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "regimerag/error.hpp"

namespace regimerag {

using nlohmann::json;

double PrecursorPolicy::baseline_for(const std::string& device) const {
  auto it = device_baseline.find(device);
  return it == device_baseline.end() ? baseline_rate : it->second;
}

void PrecursorPolicy::validate() const {
  if (!(window_seconds > 0.0)) throw Error(ErrorCode::InvalidConfig, "window must be positive");
  if (!(frequency_threshold > 0.0 && frequency_threshold <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "frequency threshold must lie in (0, 1]");
  }
  if (!std::isfinite(deviation_threshold)) {
    throw Error(ErrorCode::InvalidConfig, "deviation threshold must be finite");
  }
}

PrecursorMonitor::PrecursorMonitor(PrecursorPolicy policy) : policy_(std::move(policy)) {
  policy_.validate();
}

std::optional<PrecursorAlert> PrecursorMonitor::update(const DeviationRecord& record) {
  if (!std::isfinite(record.deviation) || record.deviation < 0.0 || !std::isfinite(record.time)) {
    throw Error(ErrorCode::InvalidArgument, "deviation records must be finite and non-negative");
  }
  DeviceState& st = devices_[record.device];
  if (st.last_time && record.time < *st.last_time) {
    throw Error(ErrorCode::OutOfOrderRecord,
                record.device + ": record at " + std::to_string(record.time) + " precedes " +
                    std::to_string(*st.last_time));
  }
  st.last_time = record.time;

  const double horizon_start = record.time - policy_.window_seconds;
  while (!st.records.empty() && st.records.front().time < horizon_start) {
    if (st.records.front().deviation > policy_.deviation_threshold) --st.exceeding;
    st.records.pop_front();
  }
  st.records.push_back(record);
  if (record.deviation > policy_.deviation_threshold) ++st.exceeding;

  if (st.records.size() < policy_.min_window_records) return std::nullopt;
  if (st.last_alert && record.time - *st.last_alert < policy_.window_seconds) return std::nullopt;

  const double rate = static_cast<double>(st.exceeding) / static_cast<double>(st.records.size());
  const double baseline = policy_.baseline_for(record.device);
  if (rate < policy_.frequency_threshold || !(rate > baseline)) return std::nullopt;

  st.last_alert = record.time;
  PrecursorAlert alert{record.device, record.time, rate, baseline, {}};
  for (const auto& r : st.records) {
    if (r.deviation > policy_.deviation_threshold) alert.contributing.push_back(r);
  }
  return alert;
}

double PrecursorMonitor::window_rate(const std::string& device) const {
  auto it = devices_.find(device);
  if (it == devices_.end() || it->second.records.empty()) return 0.0;
  return static_cast<double>(it->second.exceeding) /
         static_cast<double>(it->second.records.size());
}

std::size_t PrecursorMonitor::window_size(const std::string& device) const {
  auto it = devices_.find(device);
  return it == devices_.end() ? 0 : it->second.records.size();
}

std::vector<DeviationRecord> PrecursorMonitor::window(const std::string& device) const {
  auto it = devices_.find(device);
  if (it == devices_.end()) return {};
  return {it->second.records.begin(), it->second.records.end()};
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorCode::InvalidArgument, "quantile of an empty set");
  if (!(q >= 0.0 && q <= 1.0)) throw Error(ErrorCode::InvalidArgument, "quantile outside [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

PrecursorPolicy calibrate_policy(std::span<const DeviationRecord> healthy, PrecursorPolicy base,
                                 double percentile, std::size_t min_device_records) {
  if (healthy.empty()) throw Error(ErrorCode::InvalidArgument, "no healthy records to calibrate on");
  std::vector<double> devs;
  devs.reserve(healthy.size());
  for (const auto& r : healthy) devs.push_back(r.deviation);
  base.deviation_threshold = quantile(devs, percentile);

  std::map<std::string, std::pair<std::size_t, std::size_t>> per_device;  // (exceeding, total)
  std::size_t exceeding = 0;
  for (const auto& r : healthy) {
    const bool over = r.deviation > base.deviation_threshold;
    exceeding += over ? 1 : 0;
    auto& [e, n] = per_device[r.device];
    e += over ? 1 : 0;
    ++n;
  }
  base.baseline_rate = static_cast<double>(exceeding) / static_cast<double>(healthy.size());
  base.device_baseline.clear();
  for (const auto& [device, counts] : per_device) {
    if (counts.second >= min_device_records) {
      base.device_baseline[device] =
          static_cast<double>(counts.first) / static_cast<double>(counts.second);
    }
  }
  base.validate();
  return base;
}

void save_policy(const PrecursorPolicy& policy, const std::filesystem::path& file) {
  json j;
  j["window_days"] = policy.window_seconds / kSecondsPerDay;
  j["deviation_threshold"] = policy.deviation_threshold;
  j["frequency_threshold"] = policy.frequency_threshold;
  j["baseline_rate"] = policy.baseline_rate;
  j["device_baseline"] = policy.device_baseline;
  j["min_window_records"] = policy.min_window_records;
  std::ofstream out(file);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + file.string());
  out << j.dump(2) << '\n';
}

PrecursorPolicy load_policy(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + file.string());
  try {
    json j;
    in >> j;
    PrecursorPolicy p;
    p.window_seconds = j.value("window_days", 14.0) * kSecondsPerDay;
    p.deviation_threshold = j.at("deviation_threshold").get<double>();
    p.frequency_threshold = j.value("frequency_threshold", 0.3);
    p.baseline_rate = j.value("baseline_rate", 0.0);
    p.device_baseline = j.value("device_baseline", std::map<std::string, double>{});
    p.min_window_records = j.value("min_window_records", std::size_t{4});
    p.validate();
    return p;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, file.string() + ": " + e.what());
  }
}

std::vector<DeviationRecord> read_deviation_csv(std::istream& in) {
  std::vector<DeviationRecord> out;
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (!header_seen) {
      header_seen = true;
      if (line != "device,timestamp,deviation" && !line.starts_with("device,timestamp,deviation,")) {
        throw Error(ErrorCode::InvalidArgument, "expected header device,timestamp,deviation");
      }
      continue;
    }
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string::npos) {
      throw Error(ErrorCode::InvalidArgument, "line " + std::to_string(lineno) + ": need 3 fields");
    }
    DeviationRecord r;
    r.device = line.substr(0, c1);
    const char* b = line.data();
    auto r1 = std::from_chars(b + c1 + 1, b + c2, r.time);
    const auto c3 = line.find(',', c2 + 1);  // extra columns are ignored
    const char* stop = b + (c3 == std::string::npos ? line.size() : c3);
    auto r2 = std::from_chars(b + c2 + 1, stop, r.deviation);
    if (r1.ec != std::errc{} || r2.ec != std::errc{} || r1.ptr != b + c2 || r2.ptr != stop) {
      throw Error(ErrorCode::InvalidArgument, "line " + std::to_string(lineno) + ": bad number");
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_alert_jsonl(std::ostream& out, const PrecursorAlert& alert) {
  json contributing = json::array();
  for (const auto& r : alert.contributing) {
    contributing.push_back({{"time", r.time}, {"deviation", r.deviation}});
  }
  out << json{{"device", alert.device},
              {"fired_at", alert.fired_at},
              {"window_rate", alert.window_rate},
              {"baseline_rate", alert.baseline_rate},
              {"contributing", std::move(contributing)}}
             .dump()
      << '\n';
}

}  // namespace regimerag
