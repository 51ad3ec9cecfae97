#include "regimerag/augmentation.hpp"

#include <ostream>

#include <spdlog/spdlog.h>

#include "parallel.hpp"
#include "regimerag/error.hpp"

namespace regimerag {

namespace {

Matrix splice(const KnowledgeBase& kb, std::span<const std::size_t> kb_indices,
              const Matrix& history) {
  std::vector<const Matrix*> parts;
  parts.reserve(kb_indices.size() + 1);
  for (std::size_t idx : kb_indices) parts.push_back(&kb.sample(idx).values);
  parts.push_back(&history);
  return vstack(parts);
}

std::vector<double> column_scales(const KnowledgeBase& kb) {
  std::vector<double> out(kb.schema().size());
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = kb.stats().scale(c);
  return out;
}

ForecastInput make_input(Matrix context, Matrix future_covariates, const KnowledgeBase& kb,
                         const AugmentationConfig& config) {
  ForecastInput in;
  in.context = std::move(context);
  in.future_covariates = std::move(future_covariates);
  in.schema = kb.schema();
  in.history_len = config.history_len;
  in.horizon = kb.regime_len() - config.history_len;
  in.weights = config.alignment_weights;
  in.column_scale = column_scales(kb);
  return in;
}

void check_config(const KnowledgeBase& kb, const AugmentationConfig& config) {
  if (config.history_len == 0 || config.history_len >= kb.regime_len()) {
    throw Error(ErrorCode::LengthMismatch, "history length must be within the regime");
  }
}

}  // namespace

AgentCalibration calibrate_k(const RetrievalResult& c_final, const KnowledgeBase& kb,
                             const Forecaster& forecaster, const AugmentationConfig& config) {
  check_config(kb, config);
  AgentCalibration cal;
  const std::size_t big_k = c_final.entries.size();
  if (big_k >= 1) cal.agent_path = c_final.entries.front().path;
  if (big_k < 2) {
    spdlog::warn("agent calibration needs at least 2 retrieved candidates, got {}; using k = 0",
                 big_k);
    cal.insufficient_candidates = true;
    return cal;
  }

  const RegimeSample& agent = kb.sample(c_final.entries.front().kb_index);
  const std::size_t hist = config.history_len;
  const std::size_t horizon = kb.regime_len() - hist;
  const std::size_t target = kb.schema().target_index();
  const auto covs = kb.schema().covariate_indices();

  const Matrix agent_history = agent.values.slice_rows(0, hist);
  Matrix agent_future_cov(horizon, covs.size());
  std::vector<double> agent_truth(horizon);
  for (std::size_t h = 0; h < horizon; ++h) {
    agent_truth[h] = agent.values(hist + h, target);
    for (std::size_t j = 0; j < covs.size(); ++j) agent_future_cov(h, j) = agent.values(hist + h, covs[j]);
  }
  const double scale = kb.stats().scale(target);

  const std::size_t first_k = config.include_zero_probe ? 0 : 1;
  std::vector<std::size_t> ks;
  for (std::size_t k = first_k; k < big_k; ++k) ks.push_back(k);
  std::vector<double> losses(ks.size());

  detail::parallel_for(ks.size(), config.threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t k = ks[i];
      // ranks k+1 .. 2, so rank 2 sits next to the agent
      std::vector<std::size_t> pool;
      for (std::size_t r = k + 1; r >= 2; --r) pool.push_back(c_final.entries[r - 1].kb_index);
      auto input = make_input(splice(kb, pool, agent_history), agent_future_cov, kb, config);
      const auto out = forecaster.forecast(input);
      losses[i] = loss(out.prediction, agent_truth, config.metric, scale);
    }
  });

  std::size_t best = 0;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    cal.losses.emplace_back(ks[i], losses[i]);
    if (losses[i] < losses[best]) best = i;
  }
  cal.k_star = ks[best];
  return cal;
}

ForecastOutcome augmented_forecast(const Query& query, const RetrievalResult& c_final,
                                   std::size_t k, const KnowledgeBase& kb,
                                   const Forecaster& forecaster, const AugmentationConfig& config,
                                   std::span<const double> truth) {
  check_config(kb, config);
  if (query.history.rows() != config.history_len) {
    throw Error(ErrorCode::LengthMismatch, "query history length differs from configuration");
  }
  k = std::min(k, c_final.entries.size());

  ForecastOutcome outcome;
  outcome.k_used = k;
  std::vector<std::size_t> order;  // ranks, 1-based, in splice order
  if (config.order == ChainOrder::RankOneAdjacent) {
    for (std::size_t r = k; r >= 1; --r) order.push_back(r);
  } else {
    for (std::size_t r = 1; r <= k; ++r) order.push_back(r);
  }
  for (std::size_t r : order) {
    outcome.chain.paths.push_back(c_final.entries[r - 1].path);
    outcome.chain.kb_indices.push_back(c_final.entries[r - 1].kb_index);
  }

  auto input = make_input(splice(kb, outcome.chain.kb_indices, query.history),
                          query.future_covariates, kb, config);
  outcome.chain.total_rows = input.context.rows();
  outcome.prediction = forecaster.forecast(input).prediction;
  if (outcome.prediction.size() != input.horizon) {
    throw Error(ErrorCode::MalformedResponse, "backend returned wrong forecast length");
  }
  outcome.context = std::move(input.context);
  if (!truth.empty()) {
    outcome.deviation = loss(outcome.prediction, truth, config.metric,
                             kb.stats().scale(kb.schema().target_index()));
  }
  return outcome;
}

ForecastOutcome augmented_forecast(const Query& query, const RetrievalResult& c_final,
                                   const AgentCalibration& calibration, const KnowledgeBase& kb,
                                   const Forecaster& forecaster, const AugmentationConfig& config,
                                   std::span<const double> truth) {
  auto outcome =
      augmented_forecast(query, c_final, calibration.k_star, kb, forecaster, config, truth);
  outcome.calibration = calibration;
  return outcome;
}

void write_chain_csv(std::ostream& out, const ForecastOutcome& outcome,
                     const VariableSchema& schema, std::size_t regime_len) {
  out << "step,source";
  for (const auto& v : schema.variables()) out << ',' << v.name;
  out << '\n';
  const std::size_t spliced = outcome.chain.paths.size() * regime_len;
  for (std::size_t r = 0; r < outcome.context.rows(); ++r) {
    out << r << ',';
    if (r < spliced) {
      out << outcome.chain.paths[r / regime_len].str();
    } else {
      out << "query";
    }
    for (std::size_t c = 0; c < outcome.context.cols(); ++c) {
      out << ',' << format_value(outcome.context(r, c));
    }
    out << '\n';
  }
}

}  // namespace regimerag
