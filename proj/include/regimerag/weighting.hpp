#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "regimerag/kb.hpp"
#include "regimerag/matrix.hpp"

namespace regimerag {

struct PointWeightConfig {
  std::size_t history_len = 12;
  std::size_t horizon = 6;
  double decay = 0.95;

  std::size_t regime_len() const noexcept { return history_len + horizon; }
};

/// Per-timestamp weights: history rows decay as decay^(history_len - t)
/// (t 1-based), future covariate cells are 1, future target cells are 0.
struct PointWeights {
  Matrix matrix;
};

/// Per-variable weights; target entry 1, covariates are MI normalized by the
/// largest covariate MI.
struct CovariateWeights {
  std::vector<double> weights;
  std::vector<double> mi_raw;  // target entry left at 0
  bool all_zero = false;
};

/// The retrieval weight matrix: point weights times covariate weights.
struct FusedWeights {
  Matrix matrix;
};

enum class WeightingScheme { Uniform, Point, Fused };
enum class LogBase { Natural, Bits };

PointWeights build_point_weights(const PointWeightConfig& config, const VariableSchema& schema,
                                 std::size_t regime_len);

/// Plug-in MI estimate from an equal-width `bins` x `bins` histogram.
/// Constant inputs carry no information and yield 0.
double estimate_mutual_information(std::span<const double> x, std::span<const double> y,
                                   std::size_t bins, LogBase base = LogBase::Natural);

/// ceil(sqrt(n / 5)) clamped to [2, 32].
std::size_t default_mi_bins(std::size_t pairs);

/// Applies the max-normalization to raw MI scores. Covariates with
/// `active[c] == false` get weight 0 and are left out of the maximum.
CovariateWeights covariate_weights_from_mi(const VariableSchema& schema, std::vector<double> mi_raw,
                                           const std::vector<bool>* active = nullptr);

/// Pools every (covariate, target) pair of every sample into one estimate per
/// covariate. `bins == 0` selects default_mi_bins. Uses the KB's MI cache when
/// it matches.
CovariateWeights build_covariate_weights(const KnowledgeBase& kb, std::size_t bins = 0,
                                         LogBase base = LogBase::Natural,
                                         const std::vector<bool>* active = nullptr);

/// Computes raw MI for every covariate and stores it in the KB cache.
void refresh_mi_cache(KnowledgeBase& kb, std::size_t bins = 0);

FusedWeights fuse_weights(const PointWeights& point, const CovariateWeights& cov);

/// Weight matrix for a scheme: Uniform masks future targets only, Point
/// drops the covariate factor, Fused is the full product.
FusedWeights weights_for_scheme(WeightingScheme scheme, const PointWeightConfig& config,
                                const KnowledgeBase& kb, std::size_t bins = 0,
                                const std::vector<bool>* active = nullptr);

/// CSV with a `t` column then one column per variable.
void write_weights_csv(std::ostream& out, const Matrix& weights, const VariableSchema& schema);

}  // namespace regimerag
