#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "regimerag/forecaster.hpp"
#include "regimerag/kb.hpp"
#include "regimerag/retrieval.hpp"

namespace regimerag {

/// Order of retrieved regimes in the final context. RankOneAdjacent puts the
/// best match right before the query; Literal splices rank 1 first. The agent
/// phase always places rank 2 next to the agent.
enum class ChainOrder { RankOneAdjacent, Literal };

struct AugmentationConfig {
  std::size_t history_len = 12;
  LossMetric metric = LossMetric::MSE;
  bool include_zero_probe = true;
  ChainOrder order = ChainOrder::RankOneAdjacent;
  /// Handed to backends as alignment weights (regime_len x V), usually the
  /// retrieval weights.
  std::optional<Matrix> alignment_weights;
  std::size_t threads = 1;
};

/// Regimes in splice order (first = farthest from the query).
struct ContextChain {
  std::vector<HierarchicalPath> paths;
  std::vector<std::size_t> kb_indices;
  std::size_t total_rows = 0;  // spliced rows plus the query history
};

struct AgentCalibration {
  std::size_t k_star = 0;
  std::vector<std::pair<std::size_t, double>> losses;  // (k, loss), increasing k
  std::optional<HierarchicalPath> agent_path;
  bool insufficient_candidates = false;
};

struct ForecastOutcome {
  std::vector<double> prediction;
  std::size_t k_used = 0;
  ContextChain chain;
  Matrix context;  // exactly what the backend saw
  std::optional<AgentCalibration> calibration;
  std::optional<double> deviation;  // loss against ground truth, when supplied
};

/// Picks the context count on the top-1 retrieval, whose future is known:
/// for each k, forecasts the agent from ranks k+1..2 spliced before its
/// history and scores against its true future. Smallest k wins ties.
AgentCalibration calibrate_k(const RetrievalResult& c_final, const KnowledgeBase& kb,
                             const Forecaster& forecaster, const AugmentationConfig& config);

/// Forecasts the query with the top `k` retrievals spliced before its history.
ForecastOutcome augmented_forecast(const Query& query, const RetrievalResult& c_final,
                                   std::size_t k, const KnowledgeBase& kb,
                                   const Forecaster& forecaster, const AugmentationConfig& config,
                                   std::span<const double> truth = {});

ForecastOutcome augmented_forecast(const Query& query, const RetrievalResult& c_final,
                                   const AgentCalibration& calibration, const KnowledgeBase& kb,
                                   const Forecaster& forecaster, const AugmentationConfig& config,
                                   std::span<const double> truth = {});

/// Rows of the spliced context with their source path (or "query") and a
/// synthetic uniform step index.
void write_chain_csv(std::ostream& out, const ForecastOutcome& outcome,
                     const VariableSchema& schema, std::size_t regime_len);

}  // namespace regimerag
