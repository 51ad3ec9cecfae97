#pragma once

#include <cstddef>
#include <deque>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace regimerag {

inline constexpr double kSecondsPerDay = 86400.0;

struct DeviationRecord {
  std::string device;  // device path prefix, e.g. "B777/B-2001"
  double time = 0.0;   // logical seconds
  double deviation = 0.0;
};

/// Rolling-window precursor rule: fire when the fraction of window records
/// whose deviation exceeds `deviation_threshold` reaches
/// `frequency_threshold` and exceeds the device's healthy baseline rate.
struct PrecursorPolicy {
  double window_seconds = 14 * kSecondsPerDay;
  double deviation_threshold = 0.0;
  double frequency_threshold = 0.3;
  double baseline_rate = 0.0;  // fleet-wide fallback
  std::map<std::string, double> device_baseline;
  // Windows with fewer records never fire, so one spike on a quiet device
  // cannot reach the frequency threshold alone.
  std::size_t min_window_records = 4;

  double baseline_for(const std::string& device) const;
  void validate() const;
};

struct PrecursorAlert {
  std::string device;
  double fired_at = 0.0;
  double window_rate = 0.0;
  double baseline_rate = 0.0;
  std::vector<DeviationRecord> contributing;  // exceeding records in the window
};

/// Per-device sliding windows over logical time. Records of one device must
/// arrive in nondecreasing time order.
class PrecursorMonitor {
 public:
  explicit PrecursorMonitor(PrecursorPolicy policy);

  std::optional<PrecursorAlert> update(const DeviationRecord& record);

  const PrecursorPolicy& policy() const noexcept { return policy_; }
  /// Fraction of exceeding records in the device's current window (0 if none).
  double window_rate(const std::string& device) const;
  std::size_t window_size(const std::string& device) const;
  std::vector<DeviationRecord> window(const std::string& device) const;

 private:
  struct DeviceState {
    std::deque<DeviationRecord> records;
    std::size_t exceeding = 0;
    std::optional<double> last_time;
    std::optional<double> last_alert;
  };

  PrecursorPolicy policy_;
  std::map<std::string, DeviceState> devices_;
};

/// Linear-interpolated quantile, q in [0, 1].
double quantile(std::vector<double> values, double q);

/// Sets the deviation threshold to the `percentile` quantile of healthy
/// deviations and derives per-device and fleet baseline rates from the same
/// records. Devices with fewer than `min_device_records` use the fleet rate.
PrecursorPolicy calibrate_policy(std::span<const DeviationRecord> healthy, PrecursorPolicy base,
                                 double percentile = 0.99, std::size_t min_device_records = 10);

void save_policy(const PrecursorPolicy& policy, const std::filesystem::path& file);
PrecursorPolicy load_policy(const std::filesystem::path& file);

/// CSV with header device,timestamp,deviation; further columns are ignored.
std::vector<DeviationRecord> read_deviation_csv(std::istream& in);
void write_alert_jsonl(std::ostream& out, const PrecursorAlert& alert);

}  // namespace regimerag
