#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "regimerag/augmentation.hpp"
#include "regimerag/forecaster.hpp"
#include "regimerag/kb.hpp"
#include "regimerag/maintenance.hpp"
#include "regimerag/retrieval.hpp"
#include "regimerag/synth.hpp"
#include "regimerag/weighting.hpp"

namespace regimerag {

struct PolicyConfig {
  double window_days = 14.0;
  double frequency_threshold = 0.3;
  double percentile = 0.99;          // healthy quantile used for the deviation threshold
  std::size_t min_window_records = 4;
  std::size_t min_device_records = 10;  // per-device baseline needs this many records
};

/// Everything that determines a result cell. Loaded from a JSON document;
/// unknown keys are rejected so typos surface as usage errors.
struct EngineConfig {
  std::size_t history_len = 12;
  double decay = 0.95;
  std::size_t bins = 0;  // 0 selects the default MI bin count
  std::size_t top_k = 12;
  std::size_t stage1_multiplier = 10;
  std::optional<Metric> stage1 = Metric::Cosine;
  Metric stage2 = Metric::MatrixProfile;
  WeightingScheme scheme = WeightingScheme::Fused;
  std::optional<std::vector<std::string>> covariates;  // active subset; unset keeps all
  std::string backend = "nearest-context";
  std::optional<std::string> replay_cache;
  double backend_timeout_seconds = 30.0;
  LossMetric loss = LossMetric::MSE;
  std::optional<std::size_t> fixed_k;  // unset selects the agent-calibrated k
  bool include_zero_probe = true;
  ChainOrder chain_order = ChainOrder::RankOneAdjacent;
  bool exclude_overlap = true;
  /// Literal path prefix, or "@plane" / "@group" relative to each query.
  std::string scope;
  std::size_t threads = 1;
  std::uint64_t seed = 42;
  std::size_t eval_queries = 200;
  PolicyConfig policy;

  static EngineConfig from_json_text(std::string_view text);
  static EngineConfig from_file(const std::filesystem::path& file);
  std::string to_json_text() const;
  /// Hash of every result-affecting field (threads excluded).
  std::string hash() const;
  void validate() const;
};

std::string_view to_string(WeightingScheme s) noexcept;
std::optional<WeightingScheme> parse_scheme(std::string_view text) noexcept;
/// "dynamic" or "fixed:<n>".
std::optional<std::size_t> parse_k_mode(std::string_view text);
/// "cosine+matrix-profile" style plans; a single name ranks the whole view.
std::pair<std::optional<Metric>, Metric> parse_metric_plan(std::string_view text);

/// Where a query comes from, for scoping and overlap exclusion.
struct QueryOrigin {
  std::optional<HierarchicalPath> path;
  std::optional<std::pair<double, double>> time_range;
};

/// Retrieval plus augmentation over one knowledge base. The KB must outlive
/// the engine. Thread-safe for concurrent forecasts.
class Engine {
 public:
  Engine(const KnowledgeBase& kb, EngineConfig config);
  Engine(const KnowledgeBase& kb, EngineConfig config, std::shared_ptr<const Forecaster> backend);

  const KnowledgeBase& kb() const noexcept { return *kb_; }
  const EngineConfig& config() const noexcept { return config_; }
  const FusedWeights& weights() const noexcept { return weights_; }
  const Forecaster& backend() const noexcept { return *backend_; }

  Query make_query(const Matrix& history, const Matrix& future_covariates) const;
  Query query_from_regime(const Matrix& regime) const;

  KbView candidate_view(const QueryOrigin& origin) const;
  RetrievalResult retrieve(const Query& query, const QueryOrigin& origin,
                           std::size_t threads = 1) const;

  AugmentationConfig augmentation_config(std::size_t threads = 1) const;

  /// Full pipeline: retrieve, choose k (fixed or calibrated), splice, forecast.
  ForecastOutcome forecast(const Query& query, const QueryOrigin& origin,
                           std::span<const double> truth = {}, std::size_t threads = 1) const;

 private:
  const KnowledgeBase* kb_;
  EngineConfig config_;
  FusedWeights weights_;
  std::shared_ptr<const Forecaster> backend_;
};

/// Splits the future target off a full regime.
std::vector<double> future_target(const Matrix& regime, std::size_t history_len,
                                  const VariableSchema& schema);

/// Reads a query CSV (header timestamp + schema variables, regime_len rows).
/// Future target cells may be empty or "nan"; they are never read.
struct QueryCsv {
  Matrix history;
  Matrix future_covariates;
  std::vector<double> timestamps;
  std::optional<std::vector<double>> truth;  // present when every future target cell is set
};
QueryCsv read_query_csv(std::istream& in, const VariableSchema& schema, std::size_t regime_len,
                        std::size_t history_len);

/// Seeded sample of `count` healthy query-split flights from a query store.
/// Without labels every sample is eligible.
std::vector<std::size_t> select_eval_queries(const KnowledgeBase& queries,
                                             const std::vector<FlightLabel>* labels,
                                             std::size_t count, std::uint64_t seed);

struct ResultTable {
  std::string row_header;
  std::vector<std::string> columns;
  std::vector<std::pair<std::string, std::vector<double>>> rows;

  const std::vector<double>& row(std::string_view label) const;
  double cell(std::string_view row_label, std::string_view column) const;
};

enum class Suite { Weighting, Metric, KbScope, ContextK, Covariate };
std::string_view to_string(Suite s) noexcept;
std::optional<Suite> parse_suite(std::string_view text) noexcept;

struct SuiteResult {
  Suite suite = Suite::Weighting;
  ResultTable table;
  std::optional<ResultTable> k_histogram;  // context-k suite only
  std::size_t queries = 0;
};

/// One ablation grid. Each cell is the mean MSE / MAE (normalized target
/// units) over the same query sample. Queries run in parallel on
/// `config.threads`; results do not depend on the thread count.
SuiteResult run_suite(Suite suite, const KnowledgeBase& kb, const KnowledgeBase& queries,
                      const std::vector<FlightLabel>* labels, const EngineConfig& config);

std::string provenance_line(std::string_view what, const EngineConfig& config,
                            std::size_t queries);
void write_table_csv(std::ostream& out, const ResultTable& table, std::string_view provenance);
void write_table_text(std::ostream& out, const ResultTable& table);
/// Refuses to replace an existing file unless `force`.
void write_table_file(const std::filesystem::path& file, const ResultTable& table,
                      std::string_view provenance, bool force);

/// Device a flight belongs to: its group/device prefix.
std::string device_of(const HierarchicalPath& path);

/// Forecast deviation of each listed flight, ordered by (time, device).
std::vector<DeviationRecord> score_flights(const Engine& engine, const KnowledgeBase& flights,
                                           std::span<const std::size_t> indices);

PrecursorPolicy policy_from_config(const PolicyConfig& config);

/// Feeds the records through a monitor in (time, device) order.
std::vector<PrecursorAlert> monitor_records(std::vector<DeviationRecord> records,
                                            const PrecursorPolicy& policy);

struct DetectionReport {
  PrecursorPolicy policy;
  std::vector<DeviationRecord> calibration;
  std::vector<DeviationRecord> monitored;
  std::vector<PrecursorAlert> alerts;
};

/// Scores the calibration and query splits, calibrates the policy on the
/// calibration split unless `policy` is given, and monitors the query split.
DetectionReport run_detection(const KnowledgeBase& kb, const KnowledgeBase& flights,
                              const std::vector<FlightLabel>& labels, const EngineConfig& config,
                              std::optional<PrecursorPolicy> policy = std::nullopt);

/// device,timestamp,deviation,exceeds
void write_timeline_csv(std::ostream& out, std::span<const DeviationRecord> records,
                        const PrecursorPolicy& policy);

/// Fleet configuration from JSON (keys mirror FleetConfig; "fault" optional).
FleetConfig fleet_config_from_json_text(std::string_view text);

}  // namespace regimerag
