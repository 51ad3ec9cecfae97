#include "regimerag/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

#include "parallel.hpp"
#include "regimerag/error.hpp"

namespace regimerag {

std::string_view to_string(Metric m) noexcept {
  switch (m) {
    case Metric::Cosine: return "cosine";
    case Metric::Euclidean: return "euclidean";
    case Metric::MatrixProfile: return "matrix-profile";
  }
  return "unknown";
}

std::optional<Metric> parse_metric(std::string_view text) noexcept {
  if (text == "cosine") return Metric::Cosine;
  if (text == "euclidean") return Metric::Euclidean;
  if (text == "matrix-profile" || text == "mp") return Metric::MatrixProfile;
  return std::nullopt;
}

Query make_query(const Matrix& history, const Matrix& future_covariates,
                 const VariableSchema& schema, const ColumnStats& stats, double fill) {
  const auto covs = schema.covariate_indices();
  if (history.cols() != schema.size()) {
    throw Error(ErrorCode::ShapeMismatch, "query history width differs from schema");
  }
  if (future_covariates.cols() != covs.size()) {
    throw Error(ErrorCode::ShapeMismatch, "future covariate width differs from covariate count");
  }
  for (double v : history.flat()) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "query history");
  }
  for (double v : future_covariates.flat()) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "query future covariates");
  }

  const std::size_t hist = history.rows();
  const std::size_t horizon = future_covariates.rows();
  Query q;
  q.history = history;
  q.future_covariates = future_covariates;
  q.assembled = Matrix(hist + horizon, schema.size());
  for (std::size_t r = 0; r < hist; ++r) {
    for (std::size_t c = 0; c < schema.size(); ++c) q.assembled(r, c) = history(r, c);
  }
  for (std::size_t r = 0; r < horizon; ++r) {
    q.assembled(hist + r, schema.target_index()) = fill;
    for (std::size_t j = 0; j < covs.size(); ++j) {
      q.assembled(hist + r, covs[j]) = future_covariates(r, j);
    }
  }
  q.normalized = normalize(q.assembled, stats);
  for (std::size_t r = hist; r < hist + horizon; ++r) q.normalized(r, schema.target_index()) = 0.0;
  return q;
}

Query query_from_regime(const Matrix& regime, std::size_t history_len, const VariableSchema& schema,
                        const ColumnStats& stats) {
  if (history_len == 0 || history_len >= regime.rows()) {
    throw Error(ErrorCode::LengthMismatch, "history length must be within the regime");
  }
  const auto covs = schema.covariate_indices();
  const std::size_t horizon = regime.rows() - history_len;
  Matrix future(horizon, covs.size());
  for (std::size_t r = 0; r < horizon; ++r) {
    for (std::size_t j = 0; j < covs.size(); ++j) future(r, j) = regime(history_len + r, covs[j]);
  }
  return make_query(regime.slice_rows(0, history_len), future, schema, stats);
}

double weighted_cosine(std::span<const double> q, std::span<const double> c,
                       std::span<const double> w) {
  if (q.size() != c.size() || q.size() != w.size()) {
    throw Error(ErrorCode::ShapeMismatch, "weighted_cosine operands differ in shape");
  }
  double dot = 0.0;
  double qq = 0.0;
  double cc = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (w[i] == 0.0) continue;
    dot += w[i] * q[i] * c[i];
    qq += w[i] * q[i] * q[i];
    cc += w[i] * c[i] * c[i];
  }
  if (qq == 0.0 || cc == 0.0) return 0.0;
  return dot / (std::sqrt(qq) * std::sqrt(cc));
}

double weighted_cosine(const Matrix& q, const Matrix& c, const FusedWeights& w) {
  if (!q.same_shape(c) || !q.same_shape(w.matrix)) {
    throw Error(ErrorCode::ShapeMismatch, "weighted_cosine operands differ in shape");
  }
  return weighted_cosine(q.flat(), c.flat(), w.matrix.flat());
}

double weighted_mp_distance(std::span<const double> q, std::span<const double> c,
                            std::span<const double> w) {
  if (q.size() != c.size() || q.size() != w.size()) {
    throw Error(ErrorCode::ShapeMismatch, "weighted_mp_distance operands differ in shape");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (w[i] == 0.0) continue;
    const double d = q[i] - c[i];
    acc += w[i] * d * d;
  }
  return std::sqrt(acc);
}

double weighted_mp_distance(const Matrix& q, const Matrix& c, const FusedWeights& w) {
  if (!q.same_shape(c) || !q.same_shape(w.matrix)) {
    throw Error(ErrorCode::ShapeMismatch, "weighted_mp_distance operands differ in shape");
  }
  return weighted_mp_distance(q.flat(), c.flat(), w.matrix.flat());
}

CandidateSet candidates_from_view(const KbView& view) {
  CandidateSet set;
  set.values.reserve(view.size());
  set.paths.reserve(view.size());
  set.ids.reserve(view.size());
  for (std::size_t i = 0; i < view.size(); ++i) {
    const std::size_t idx = view.index(i);
    set.values.push_back(view.kb().normalized(idx));
    set.paths.push_back(&view.kb().sample(idx).path);
    set.ids.push_back(idx);
  }
  return set;
}

namespace {

// Scoring restricted to the cells with non-zero weight. Skipping masked cells
// keeps every score independent of whatever the candidate stores there.
class ScoringKernel {
 public:
  ScoringKernel(std::span<const double> query, std::span<const double> weights) {
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (weights[i] < 0.0 || !std::isfinite(weights[i])) {
        throw Error(ErrorCode::InvalidArgument, "retrieval weights must be finite and >= 0");
      }
      if (weights[i] == 0.0) continue;
      cells_.push_back(i);
      w_.push_back(weights[i]);
      q_.push_back(query[i]);
      qq_ += weights[i] * query[i] * query[i];
    }
  }

  double cosine(std::span<const double> c) const {
    double dot = 0.0;
    double cc = 0.0;
    for (std::size_t j = 0; j < cells_.size(); ++j) {
      const double v = c[cells_[j]];
      dot += w_[j] * q_[j] * v;
      cc += w_[j] * v * v;
    }
    if (qq_ == 0.0 || cc == 0.0) return 0.0;
    return dot / (std::sqrt(qq_) * std::sqrt(cc));
  }

  double matrix_profile(std::span<const double> c) const {
    double acc = 0.0;
    for (std::size_t j = 0; j < cells_.size(); ++j) {
      const double d = q_[j] - c[cells_[j]];
      acc += w_[j] * d * d;
    }
    return std::sqrt(acc);
  }

  double euclidean(std::span<const double> c) const {
    double acc = 0.0;
    for (std::size_t j = 0; j < cells_.size(); ++j) {
      const double d = q_[j] - c[cells_[j]];
      acc += d * d;
    }
    return std::sqrt(acc);
  }

  double score(Metric m, std::span<const double> c) const {
    switch (m) {
      case Metric::Cosine: return cosine(c);
      case Metric::Euclidean: return euclidean(c);
      case Metric::MatrixProfile: return matrix_profile(c);
    }
    return 0.0;
  }

 private:
  std::vector<std::size_t> cells_;
  std::vector<double> w_;
  std::vector<double> q_;
  double qq_ = 0.0;
};

bool higher_is_better(Metric m) { return m == Metric::Cosine; }

double ranking_distance(Metric m, double score) { return m == Metric::Cosine ? 1.0 - score : score; }

std::vector<double> score_all(const ScoringKernel& kernel, Metric m, const CandidateSet& set,
                              std::span<const std::size_t> subset, std::size_t threads) {
  std::vector<double> out(subset.size());
  detail::parallel_for(subset.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) out[i] = kernel.score(m, set.values[subset[i]]);
  });
  return out;
}

// Orders positions of `subset` best-first by `scores`, ties by path; keeps `keep`.
std::vector<std::size_t> select_best(Metric m, const std::vector<double>& scores,
                                     const CandidateSet& set, std::span<const std::size_t> subset,
                                     std::size_t keep) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const bool desc = higher_is_better(m);
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return desc ? scores[a] > scores[b] : scores[a] < scores[b];
    return *set.paths[subset[a]] < *set.paths[subset[b]];
  };
  keep = std::min(keep, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                    better);
  order.resize(keep);
  return order;
}

}  // namespace

RetrievalResult retrieve(std::span<const double> query_normalized, const CandidateSet& candidates,
                         const FusedWeights& weights, const RetrievalPlan& plan) {
  if (candidates.size() == 0) throw Error(ErrorCode::EmptyView, "no candidates in scope");
  if (plan.k == 0) throw Error(ErrorCode::InvalidArgument, "k must be at least 1");
  if (plan.stage1_multiplier == 0) {
    throw Error(ErrorCode::InvalidArgument, "stage1 multiplier must be at least 1");
  }
  if (query_normalized.size() != weights.matrix.size()) {
    throw Error(ErrorCode::ShapeMismatch, "query and weights differ in shape");
  }
  for (auto c : candidates.values) {
    if (c.size() != weights.matrix.size()) {
      throw Error(ErrorCode::ShapeMismatch, "candidate and weights differ in shape");
    }
  }

  RetrievalResult result;
  const std::size_t n = candidates.size();
  std::size_t k = plan.k;
  if (k > n) {
    spdlog::warn("k = {} exceeds the {} candidates in scope; returning all", k, n);
    result.k_exceeded_view = true;
    k = n;
  }

  const ScoringKernel kernel(query_normalized, weights.matrix.flat());
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});

  // Stage 1: shape filter over the full view.
  const Metric m1 = plan.stage1.value_or(Metric::Cosine);
  std::vector<double> s1 = score_all(kernel, m1, candidates, all, plan.threads);
  std::vector<std::size_t> shortlist;  // candidate indices
  if (plan.stage1) {
    const std::size_t keep = std::min(n, plan.stage1_multiplier * plan.k);
    for (std::size_t pos : select_best(m1, s1, candidates, all, keep)) shortlist.push_back(pos);
    std::sort(shortlist.begin(), shortlist.end());
  } else {
    shortlist = all;
  }
  result.stage1_count = shortlist.size();

  // Stage 2: precise ranking of the shortlist.
  std::vector<double> s2 = score_all(kernel, plan.stage2, candidates, shortlist, plan.threads);
  const auto best = select_best(plan.stage2, s2, candidates, shortlist, k);

  result.entries.reserve(best.size());
  for (std::size_t r = 0; r < best.size(); ++r) {
    const std::size_t cand = shortlist[best[r]];
    RetrievalEntry e;
    e.path = *candidates.paths[cand];
    e.kb_index = candidates.ids.empty() ? cand : candidates.ids[cand];
    e.stage1_score = s1[cand];
    e.stage2_distance = ranking_distance(plan.stage2, s2[best[r]]);
    e.rank = r + 1;
    result.entries.push_back(std::move(e));
  }
  return result;
}

RetrievalResult retrieve(const Query& query, const KbView& view, const FusedWeights& weights,
                         const RetrievalPlan& plan) {
  if (view.empty()) throw Error(ErrorCode::EmptyView, "no candidates in scope");
  if (!query.normalized.same_shape(weights.matrix)) {
    throw Error(ErrorCode::ShapeMismatch, "query shape differs from weight matrix");
  }
  return retrieve(query.normalized.flat(), candidates_from_view(view), weights, plan);
}

}  // namespace regimerag
