#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "regimerag/kb.hpp"
#include "regimerag/matrix.hpp"

namespace regimerag {

/// Input of a frozen forecaster: `context` holds zero or more whole regimes
/// spliced back-to-back followed by the query's `history_len` observed rows.
struct ForecastInput {
  Matrix context;            // L_ctx x V, raw units
  Matrix future_covariates;  // horizon x |covariates|
  VariableSchema schema;
  std::size_t history_len = 0;
  std::size_t horizon = 0;

  // Optional alignment hints for backends that compare regimes directly.
  std::optional<Matrix> weights;     // regime_len x V
  std::vector<double> column_scale;  // per-variable divisor

  std::size_t regime_len() const noexcept { return history_len + horizon; }
  std::size_t spliced_regimes() const noexcept {
    return (context.rows() - history_len) / regime_len();
  }
  /// Throws on inconsistent shapes or non-finite values.
  void validate() const;
};

struct ForecastOutput {
  std::vector<double> prediction;  // target values, length horizon
};

class Forecaster {
 public:
  virtual ~Forecaster() = default;
  virtual std::string name() const = 0;
  /// Deterministic for identical input. Safe to call concurrently.
  virtual ForecastOutput forecast(const ForecastInput& input) const = 0;
};

/// Repeats the last observed target value.
class PersistenceForecaster final : public Forecaster {
 public:
  std::string name() const override { return "persistence"; }
  ForecastOutput forecast(const ForecastInput& input) const override;
};

/// Least squares of target on covariates (with intercept) over every context
/// row, applied to the future covariates.
class CovariateRegressionForecaster final : public Forecaster {
 public:
  explicit CovariateRegressionForecaster(double ridge = 1e-8) : ridge_(ridge) {}
  std::string name() const override { return "covariate-regression"; }
  ForecastOutput forecast(const ForecastInput& input) const override;

  /// Fitted [intercept, beta_1..beta_p] in schema covariate order.
  std::vector<double> fit(const ForecastInput& input) const;

 private:
  double ridge_;
};

/// Copies the future target of the spliced regime closest to the query on the
/// observed cells (history of every variable, future covariates). Falls back
/// to persistence when nothing is spliced.
class NearestContextForecaster final : public Forecaster {
 public:
  std::string name() const override { return "nearest-context"; }
  ForecastOutput forecast(const ForecastInput& input) const override;
};

/// Line-delimited JSON exchange with a child process:
///   request  {"schema":[{"name","role","unit"}...],"history_len":L,"horizon":H,
///             "context":[[...]...],"future_covariates":[[...]...]}
///   response {"prediction":[...]}  or  {"error":"..."}
/// One request per forecast; requests are serialized.
class ExternalProcessForecaster final : public Forecaster {
 public:
  explicit ExternalProcessForecaster(std::vector<std::string> argv,
                                     std::chrono::milliseconds timeout = std::chrono::seconds(30));
  ~ExternalProcessForecaster() override;
  ExternalProcessForecaster(const ExternalProcessForecaster&) = delete;
  ExternalProcessForecaster& operator=(const ExternalProcessForecaster&) = delete;

  std::string name() const override { return "external"; }
  ForecastOutput forecast(const ForecastInput& input) const override;

  /// Sends one raw request line and returns the raw response line.
  std::string exchange(const std::string& request_line) const;

 private:
  struct Child;
  void start() const;
  void stop() const;

  std::vector<std::string> argv_;
  std::chrono::milliseconds timeout_;
  mutable std::mutex mutex_;
  mutable std::unique_ptr<Child> child_;
};

/// Replays recorded responses keyed by a hash of the request line. Misses are
/// forwarded to `inner` and appended to the cache file; without an inner
/// backend a miss is BackendUnavailable.
/// Cache file: one JSON object per line, {"key":"<16 hex digits>","prediction":[...]}.
class ReplayCacheForecaster final : public Forecaster {
 public:
  ReplayCacheForecaster(std::filesystem::path cache_file, std::shared_ptr<const Forecaster> inner);

  std::string name() const override { return "replay"; }
  ForecastOutput forecast(const ForecastInput& input) const override;
  std::size_t cached_entries() const;

 private:
  std::filesystem::path file_;
  std::shared_ptr<const Forecaster> inner_;
  mutable std::mutex mutex_;
  mutable std::unordered_map<std::string, std::vector<double>> entries_;
};

/// Canonical request line of the external protocol.
std::string encode_forecast_request(const ForecastInput& input);
/// Parses a response line; checks length and finiteness.
ForecastOutput decode_forecast_response(std::string_view line, std::size_t horizon);
/// 64-bit FNV-1a of the request, as 16 lowercase hex digits.
std::string request_key(std::string_view request_line);

struct BackendOptions {
  std::chrono::milliseconds timeout = std::chrono::seconds(30);
  std::optional<std::filesystem::path> replay_cache;
};

/// "persistence", "covariate-regression", "nearest-context", or
/// "external:<command line>" (whitespace-split argv).
std::shared_ptr<const Forecaster> make_forecaster(std::string_view name,
                                                  const BackendOptions& options = {});

enum class LossMetric { MSE, MAE };

std::string_view to_string(LossMetric m) noexcept;
std::optional<LossMetric> parse_loss_metric(std::string_view text) noexcept;

/// Mean squared / absolute error of (prediction - truth) / scale.
double loss(std::span<const double> prediction, std::span<const double> truth, LossMetric metric,
            double scale = 1.0);

}  // namespace regimerag
