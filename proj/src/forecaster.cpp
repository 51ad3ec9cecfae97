#include "regimerag/forecaster.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Dense>

#include "regimerag/error.hpp"

namespace regimerag {

void ForecastInput::validate() const {
  if (history_len == 0 || horizon == 0) {
    throw Error(ErrorCode::InvalidArgument, "history_len and horizon must be positive");
  }
  if (context.cols() != schema.size()) {
    throw Error(ErrorCode::ShapeMismatch, "context width differs from schema");
  }
  if (context.rows() < history_len || (context.rows() - history_len) % regime_len() != 0) {
    throw Error(ErrorCode::ShapeMismatch,
                "context must be whole regimes followed by the query history");
  }
  const auto ncov = schema.covariate_indices().size();
  if (future_covariates.rows() != horizon || future_covariates.cols() != ncov) {
    throw Error(ErrorCode::ShapeMismatch, "future covariates must be horizon x covariates");
  }
  if (weights && (weights->rows() != regime_len() || weights->cols() != schema.size())) {
    throw Error(ErrorCode::ShapeMismatch, "alignment weights must be regime_len x V");
  }
  if (!column_scale.empty() && column_scale.size() != schema.size()) {
    throw Error(ErrorCode::ShapeMismatch, "column scale width differs from schema");
  }
  for (double v : context.flat()) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "forecast context");
  }
  for (double v : future_covariates.flat()) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "future covariates");
  }
}

ForecastOutput PersistenceForecaster::forecast(const ForecastInput& input) const {
  input.validate();
  const double last = input.context(input.context.rows() - 1, input.schema.target_index());
  return {std::vector<double>(input.horizon, last)};
}

std::vector<double> CovariateRegressionForecaster::fit(const ForecastInput& input) const {
  input.validate();
  const auto covs = input.schema.covariate_indices();
  const std::size_t n = input.context.rows();
  const std::size_t p = covs.size();
  const std::size_t target = input.schema.target_index();

  // Centered normal equations; the intercept is recovered from the means.
  Eigen::VectorXd xmean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  double ymean = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    ymean += input.context(r, target);
    for (std::size_t j = 0; j < p; ++j) xmean(static_cast<Eigen::Index>(j)) += input.context(r, covs[j]);
  }
  ymean /= static_cast<double>(n);
  xmean /= static_cast<double>(n);

  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  for (std::size_t r = 0; r < n; ++r) {
    const auto ri = static_cast<Eigen::Index>(r);
    y(ri) = input.context(r, target) - ymean;
    for (std::size_t j = 0; j < p; ++j) {
      const auto ji = static_cast<Eigen::Index>(j);
      x(ri, ji) = input.context(r, covs[j]) - xmean(ji);
    }
  }
  Eigen::MatrixXd gram = x.transpose() * x;
  gram.diagonal().array() += ridge_;
  const auto solver = gram.ldlt();
  const Eigen::VectorXd xty = x.transpose() * y;
  Eigen::VectorXd beta = solver.solve(xty);
  // Refinement against the undamped system removes the ridge bias on
  // well-posed fits; directions with no data stay at zero.
  const Eigen::MatrixXd undamped = x.transpose() * x;
  for (int step = 0; step < 3; ++step) beta += solver.solve(xty - undamped * beta);

  std::vector<double> out(p + 1);
  out[0] = ymean - xmean.dot(beta);
  for (std::size_t j = 0; j < p; ++j) out[j + 1] = beta(static_cast<Eigen::Index>(j));
  return out;
}

ForecastOutput CovariateRegressionForecaster::forecast(const ForecastInput& input) const {
  const auto coef = fit(input);
  ForecastOutput out;
  out.prediction.resize(input.horizon);
  for (std::size_t h = 0; h < input.horizon; ++h) {
    double v = coef[0];
    for (std::size_t j = 0; j + 1 < coef.size(); ++j) v += coef[j + 1] * input.future_covariates(h, j);
    out.prediction[h] = v;
  }
  for (double v : out.prediction) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "regression produced non-finite forecast");
  }
  return out;
}

ForecastOutput NearestContextForecaster::forecast(const ForecastInput& input) const {
  input.validate();
  const std::size_t m = input.spliced_regimes();
  if (m == 0) return PersistenceForecaster{}.forecast(input);

  const std::size_t len = input.regime_len();
  const std::size_t hist = input.history_len;
  const std::size_t vars = input.schema.size();
  const std::size_t target = input.schema.target_index();
  const auto covs = input.schema.covariate_indices();
  const std::size_t query_row = m * len;

  auto weight = [&](std::size_t r, std::size_t c) {
    if (input.weights) return (*input.weights)(r, c);
    return (r >= hist && c == target) ? 0.0 : 1.0;
  };
  auto scale = [&](std::size_t c) {
    return input.column_scale.empty() ? 1.0 : input.column_scale[c];
  };

  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < m; ++j) {
    const std::size_t base = j * len;
    double acc = 0.0;
    for (std::size_t r = 0; r < hist; ++r) {
      for (std::size_t c = 0; c < vars; ++c) {
        const double w = weight(r, c);
        if (w == 0.0) continue;
        const double d = (input.context(base + r, c) - input.context(query_row + r, c)) / scale(c);
        acc += w * d * d;
      }
    }
    for (std::size_t h = 0; h < input.horizon; ++h) {
      for (std::size_t k = 0; k < covs.size(); ++k) {
        const double w = weight(hist + h, covs[k]);
        if (w == 0.0) continue;
        const double d =
            (input.context(base + hist + h, covs[k]) - input.future_covariates(h, k)) / scale(covs[k]);
        acc += w * d * d;
      }
    }
    // Ties go to the regime spliced later, i.e. nearer the query.
    if (acc <= best_dist) {
      best_dist = acc;
      best = j;
    }
  }

  ForecastOutput out;
  out.prediction.resize(input.horizon);
  for (std::size_t h = 0; h < input.horizon; ++h) {
    out.prediction[h] = input.context(best * len + hist + h, target);
  }
  return out;
}

std::string_view to_string(LossMetric m) noexcept { return m == LossMetric::MSE ? "mse" : "mae"; }

std::optional<LossMetric> parse_loss_metric(std::string_view text) noexcept {
  if (text == "mse" || text == "MSE") return LossMetric::MSE;
  if (text == "mae" || text == "MAE") return LossMetric::MAE;
  return std::nullopt;
}

double loss(std::span<const double> prediction, std::span<const double> truth, LossMetric metric,
            double scale) {
  if (prediction.size() != truth.size()) {
    throw Error(ErrorCode::LengthMismatch, "prediction and truth differ in length");
  }
  if (prediction.empty()) throw Error(ErrorCode::LengthMismatch, "empty forecast");
  if (!(scale > 0.0)) throw Error(ErrorCode::InvalidArgument, "loss scale must be positive");
  double acc = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double d = (prediction[i] - truth[i]) / scale;
    acc += metric == LossMetric::MSE ? d * d : std::abs(d);
  }
  return acc / static_cast<double>(prediction.size());
}

std::shared_ptr<const Forecaster> make_forecaster(std::string_view name,
                                                  const BackendOptions& options) {
  std::shared_ptr<const Forecaster> base;
  if (name == "persistence") {
    base = std::make_shared<PersistenceForecaster>();
  } else if (name == "covariate-regression") {
    base = std::make_shared<CovariateRegressionForecaster>();
  } else if (name == "nearest-context") {
    base = std::make_shared<NearestContextForecaster>();
  } else if (name.starts_with("external:")) {
    std::istringstream words{std::string(name.substr(9))};
    std::vector<std::string> argv;
    for (std::string w; words >> w;) argv.push_back(w);
    if (argv.empty()) throw Error(ErrorCode::InvalidConfig, "external backend needs a command");
    base = std::make_shared<ExternalProcessForecaster>(std::move(argv), options.timeout);
  } else if (name == "replay") {
    if (!options.replay_cache) throw Error(ErrorCode::InvalidConfig, "replay backend needs a cache file");
    return std::make_shared<ReplayCacheForecaster>(*options.replay_cache, nullptr);
  } else {
    throw Error(ErrorCode::InvalidConfig, "unknown forecaster backend '" + std::string(name) + "'");
  }
  if (options.replay_cache) {
    return std::make_shared<ReplayCacheForecaster>(*options.replay_cache, std::move(base));
  }
  return base;
}

}  // namespace regimerag
