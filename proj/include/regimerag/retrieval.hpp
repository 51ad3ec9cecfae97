#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "regimerag/kb.hpp"
#include "regimerag/weighting.hpp"

namespace regimerag {

/// A forecasting query: observed history of every variable plus the known
/// future of the covariates. `assembled` places both on the regime grid with
/// the unknown future target filled by a constant; `normalized` is the
/// z-scored copy the retriever compares against.
struct Query {
  Matrix history;            // history_len x V
  Matrix future_covariates;  // horizon x |covariates|, schema covariate order
  Matrix assembled;          // regime_len x V
  Matrix normalized;         // regime_len x V
};

Query make_query(const Matrix& history, const Matrix& future_covariates,
                 const VariableSchema& schema, const ColumnStats& stats, double fill = 0.0);

/// Splits a complete regime into a query with `history_len` observed rows.
Query query_from_regime(const Matrix& regime, std::size_t history_len, const VariableSchema& schema,
                        const ColumnStats& stats);

/// Weighted cosine similarity; 0 when either weighted norm vanishes.
double weighted_cosine(std::span<const double> q, std::span<const double> c,
                       std::span<const double> w);
double weighted_cosine(const Matrix& q, const Matrix& c, const FusedWeights& w);

/// sqrt(sum w * (q - c)^2) over every cell.
double weighted_mp_distance(std::span<const double> q, std::span<const double> c,
                            std::span<const double> w);
double weighted_mp_distance(const Matrix& q, const Matrix& c, const FusedWeights& w);

enum class Metric { Cosine, Euclidean, MatrixProfile };

std::string_view to_string(Metric m) noexcept;
std::optional<Metric> parse_metric(std::string_view text) noexcept;

/// Stage 1 keeps the best stage1_multiplier * k candidates by `stage1`;
/// stage 2 orders them by `stage2` and keeps k. Without a stage 1 the whole
/// view is ranked by `stage2`. Euclidean uses unit weight on every cell whose
/// fused weight is non-zero.
struct RetrievalPlan {
  std::optional<Metric> stage1 = Metric::Cosine;
  Metric stage2 = Metric::MatrixProfile;
  std::size_t k = 12;
  std::size_t stage1_multiplier = 10;
  std::size_t threads = 1;
};

struct RetrievalEntry {
  HierarchicalPath path;
  std::size_t kb_index = 0;
  double stage1_score = 0.0;     // stage-1 metric value (weighted cosine by default)
  double stage2_distance = 0.0;  // ranking distance; 1 - cosine when stage 2 is Cosine
  std::size_t rank = 0;          // 1-based
};

struct RetrievalResult {
  std::vector<RetrievalEntry> entries;
  std::size_t stage1_count = 0;  // size of the intermediate shape-aligned set
  bool k_exceeded_view = false;
};

/// Candidates as z-scored spans with their paths. Spans must stay valid for
/// the lifetime of the set.
struct CandidateSet {
  std::vector<std::span<const double>> values;
  std::vector<const HierarchicalPath*> paths;
  std::vector<std::size_t> ids;

  std::size_t size() const noexcept { return values.size(); }
};

CandidateSet candidates_from_view(const KbView& view);

RetrievalResult retrieve(std::span<const double> query_normalized, const CandidateSet& candidates,
                         const FusedWeights& weights, const RetrievalPlan& plan);

RetrievalResult retrieve(const Query& query, const KbView& view, const FusedWeights& weights,
                         const RetrievalPlan& plan);

/// Straightforward reference: z-scores every raw candidate itself and ranks
/// the whole view by weighted matrix-profile distance (no pruning).
RetrievalResult retrieve_exhaustive_oracle(const Query& query, const KbView& view,
                                           const FusedWeights& weights, std::size_t k);

}  // namespace regimerag
