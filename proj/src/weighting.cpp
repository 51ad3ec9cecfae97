#include "regimerag/weighting.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include <spdlog/spdlog.h>

#include "regimerag/error.hpp"

namespace regimerag {

PointWeights build_point_weights(const PointWeightConfig& config, const VariableSchema& schema,
                                 std::size_t regime_len) {
  if (!(config.decay > 0.0 && config.decay <= 1.0)) {
    throw Error(ErrorCode::InvalidDecay, "decay must lie in (0, 1]");
  }
  if (config.history_len == 0 || config.horizon == 0 || config.regime_len() != regime_len) {
    throw Error(ErrorCode::LengthMismatch,
                "history_len + horizon must equal the regime length " + std::to_string(regime_len));
  }
  Matrix w(regime_len, schema.size());
  for (std::size_t r = 0; r < regime_len; ++r) {
    const std::size_t t = r + 1;
    for (std::size_t c = 0; c < schema.size(); ++c) {
      if (t <= config.history_len) {
        w(r, c) = std::pow(config.decay, static_cast<double>(config.history_len - t));
      } else {
        w(r, c) = schema.is_target(c) ? 0.0 : 1.0;
      }
    }
  }
  return {std::move(w)};
}

std::size_t default_mi_bins(std::size_t pairs) {
  const auto b = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(pairs) / 5.0)));
  return std::clamp<std::size_t>(b, 2, 32);
}

namespace {

// Returns false for a constant sequence.
bool bin_indices(std::span<const double> v, std::size_t bins, std::vector<std::size_t>& out) {
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!(hi > lo)) return false;
  const double width = hi - lo;
  out.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    auto b = static_cast<std::size_t>((v[i] - lo) / width * static_cast<double>(bins));
    out[i] = std::min(b, bins - 1);
  }
  return true;
}

}  // namespace

double estimate_mutual_information(std::span<const double> x, std::span<const double> y,
                                   std::size_t bins, LogBase base) {
  if (x.size() != y.size()) throw Error(ErrorCode::LengthMismatch, "MI inputs differ in length");
  if (bins == 0) throw Error(ErrorCode::InvalidArgument, "bins must be positive");
  if (x.size() < 2 * bins) {
    throw Error(ErrorCode::InvalidArgument, "MI needs at least 2 * bins samples");
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) {
      throw Error(ErrorCode::NonFiniteValue, "MI inputs must be finite");
    }
  }

  std::vector<std::size_t> bx;
  std::vector<std::size_t> by;
  if (!bin_indices(x, bins, bx) || !bin_indices(y, bins, by)) return 0.0;

  std::vector<std::size_t> joint(bins * bins, 0);
  std::vector<std::size_t> mx(bins, 0);
  std::vector<std::size_t> my(bins, 0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    ++joint[bx[i] * bins + by[i]];
    ++mx[bx[i]];
    ++my[by[i]];
  }

  const double n = static_cast<double>(x.size());
  double mi = 0.0;
  for (std::size_t i = 0; i < bins; ++i) {
    for (std::size_t j = 0; j < bins; ++j) {
      const std::size_t c = joint[i * bins + j];
      if (c == 0) continue;
      const double cij = static_cast<double>(c);
      const double denom = static_cast<double>(mx[i]) * static_cast<double>(my[j]);
      mi += cij / n * std::log(cij * n / denom);
    }
  }
  if (base == LogBase::Bits) mi /= std::numbers::ln2;
  return std::max(mi, 0.0);
}

CovariateWeights covariate_weights_from_mi(const VariableSchema& schema, std::vector<double> mi_raw,
                                           const std::vector<bool>* active) {
  if (mi_raw.size() != schema.size()) {
    throw Error(ErrorCode::DimensionMismatch, "MI vector width differs from schema");
  }
  if (active && active->size() != schema.size()) {
    throw Error(ErrorCode::DimensionMismatch, "covariate selection width differs from schema");
  }
  const auto is_active = [&](std::size_t c) { return !active || (*active)[c]; };

  double max_mi = 0.0;
  for (std::size_t c : schema.covariate_indices()) {
    if (is_active(c)) max_mi = std::max(max_mi, mi_raw[c]);
  }

  CovariateWeights out;
  out.weights.assign(schema.size(), 0.0);
  out.weights[schema.target_index()] = 1.0;
  bool any_active = false;
  for (std::size_t c : schema.covariate_indices()) {
    if (!is_active(c)) continue;
    any_active = true;
    out.weights[c] = max_mi > 0.0 ? mi_raw[c] / max_mi : 0.0;
  }
  out.all_zero = any_active && max_mi == 0.0;
  if (out.all_zero) spdlog::warn("every covariate has zero mutual information with the target");
  out.mi_raw = std::move(mi_raw);
  return out;
}

namespace {

std::vector<double> pooled_mi(const KnowledgeBase& kb, std::size_t bins, LogBase base) {
  const auto& schema = kb.schema();
  const std::size_t t = schema.target_index();
  const std::size_t n = kb.size() * kb.regime_len();
  std::vector<double> target;
  target.reserve(n);
  for (const auto& s : kb.samples()) {
    for (std::size_t r = 0; r < s.values.rows(); ++r) target.push_back(s.values(r, t));
  }
  std::vector<double> mi(schema.size(), 0.0);
  std::vector<double> cov(n);
  for (std::size_t c : schema.covariate_indices()) {
    std::size_t k = 0;
    for (const auto& s : kb.samples()) {
      for (std::size_t r = 0; r < s.values.rows(); ++r) cov[k++] = s.values(r, c);
    }
    mi[c] = estimate_mutual_information(cov, target, bins, base);
  }
  return mi;
}

}  // namespace

CovariateWeights build_covariate_weights(const KnowledgeBase& kb, std::size_t bins, LogBase base,
                                         const std::vector<bool>* active) {
  if (kb.empty()) throw Error(ErrorCode::EmptyKB, "cannot estimate covariate weights");
  if (kb.schema().size() < 2) {
    throw Error(ErrorCode::InvalidArgument, "covariate weighting needs at least two variables");
  }
  const std::size_t resolved = bins == 0 ? default_mi_bins(kb.size() * kb.regime_len()) : bins;
  std::vector<double> mi;
  if (base == LogBase::Natural && kb.mi_cache() && kb.mi_cache()->bins == resolved) {
    mi = kb.mi_cache()->raw;
  } else {
    mi = pooled_mi(kb, resolved, base);
  }
  return covariate_weights_from_mi(kb.schema(), std::move(mi), active);
}

void refresh_mi_cache(KnowledgeBase& kb, std::size_t bins) {
  if (kb.empty()) throw Error(ErrorCode::EmptyKB, "cannot estimate covariate weights");
  const std::size_t resolved = bins == 0 ? default_mi_bins(kb.size() * kb.regime_len()) : bins;
  kb.set_mi_cache({resolved, pooled_mi(kb, resolved, LogBase::Natural)});
}

FusedWeights fuse_weights(const PointWeights& point, const CovariateWeights& cov) {
  const Matrix& p = point.matrix;
  if (p.cols() != cov.weights.size()) {
    throw Error(ErrorCode::DimensionMismatch, "covariate vector length differs from matrix width");
  }
  Matrix w(p.rows(), p.cols());
  for (std::size_t r = 0; r < p.rows(); ++r) {
    for (std::size_t c = 0; c < p.cols(); ++c) w(r, c) = p(r, c) * cov.weights[c];
  }
  return {std::move(w)};
}

FusedWeights weights_for_scheme(WeightingScheme scheme, const PointWeightConfig& config,
                                const KnowledgeBase& kb, std::size_t bins,
                                const std::vector<bool>* active) {
  const auto& schema = kb.schema();
  CovariateWeights unit;
  unit.weights.assign(schema.size(), 1.0);
  if (active) {
    for (std::size_t c : schema.covariate_indices()) {
      if (!(*active)[c]) unit.weights[c] = 0.0;
    }
  }
  switch (scheme) {
    case WeightingScheme::Uniform: {
      PointWeightConfig flat = config;
      flat.decay = 1.0;
      return fuse_weights(build_point_weights(flat, schema, kb.regime_len()), unit);
    }
    case WeightingScheme::Point:
      return fuse_weights(build_point_weights(config, schema, kb.regime_len()), unit);
    case WeightingScheme::Fused:
      return fuse_weights(build_point_weights(config, schema, kb.regime_len()),
                          build_covariate_weights(kb, bins, LogBase::Natural, active));
  }
  throw Error(ErrorCode::InvalidArgument, "unknown weighting scheme");
}

void write_weights_csv(std::ostream& out, const Matrix& weights, const VariableSchema& schema) {
  out << "t";
  for (const auto& v : schema.variables()) out << ',' << v.name;
  out << '\n';
  for (std::size_t r = 0; r < weights.rows(); ++r) {
    out << r + 1;
    for (std::size_t c = 0; c < weights.cols(); ++c) out << ',' << format_exact(weights(r, c));
    out << '\n';
  }
}

}  // namespace regimerag
