#include "regimerag/pipeline.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "regimerag/error.hpp"

namespace regimerag {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, std::string_view where) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, std::string(where) + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) {
      throw Error(ErrorCode::InvalidConfig, "unknown key '" + key + "' in " + std::string(where));
    }
  }
}

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

std::string metric_plan_text(const std::optional<Metric>& s1, Metric s2) {
  std::string out;
  if (s1) out = std::string(to_string(*s1)) + "+";
  return out + std::string(to_string(s2));
}

std::string_view to_string(ChainOrder o) noexcept {
  return o == ChainOrder::RankOneAdjacent ? "rank-one-adjacent" : "literal";
}

json config_json(const EngineConfig& c, bool include_threads) {
  json j;
  j["history_len"] = c.history_len;
  j["decay"] = c.decay;
  j["bins"] = c.bins;
  j["top_k"] = c.top_k;
  j["stage1_multiplier"] = c.stage1_multiplier;
  j["retrieval_metric"] = metric_plan_text(c.stage1, c.stage2);
  j["weighting"] = std::string(to_string(c.scheme));
  j["covariates"] = c.covariates ? json(*c.covariates) : json(nullptr);
  j["backend"] = c.backend;
  j["replay_cache"] = c.replay_cache ? json(*c.replay_cache) : json(nullptr);
  j["backend_timeout_seconds"] = c.backend_timeout_seconds;
  j["loss"] = std::string(to_string(c.loss));
  j["k"] = c.fixed_k ? "fixed:" + std::to_string(*c.fixed_k) : std::string("dynamic");
  j["include_zero_probe"] = c.include_zero_probe;
  j["chain_order"] = std::string(to_string(c.chain_order));
  j["exclude_overlap"] = c.exclude_overlap;
  j["scope"] = c.scope;
  if (include_threads) j["threads"] = c.threads;
  j["seed"] = c.seed;
  j["eval_queries"] = c.eval_queries;
  j["policy"] = {{"window_days", c.policy.window_days},
                 {"frequency_threshold", c.policy.frequency_threshold},
                 {"percentile", c.policy.percentile},
                 {"min_window_records", c.policy.min_window_records},
                 {"min_device_records", c.policy.min_device_records}};
  return j;
}

std::vector<bool> active_mask(const VariableSchema& schema,
                              const std::optional<std::vector<std::string>>& covariates) {
  std::vector<bool> active(schema.size(), true);
  if (!covariates) return active;
  for (std::size_t c : schema.covariate_indices()) active[c] = false;
  for (const auto& name : *covariates) {
    auto idx = schema.index_of(name);
    if (!idx || schema.is_target(*idx)) {
      throw Error(ErrorCode::InvalidConfig, "'" + name + "' is not a covariate of the schema");
    }
    active[*idx] = true;
  }
  return active;
}

}  // namespace

std::string_view to_string(WeightingScheme s) noexcept {
  switch (s) {
    case WeightingScheme::Uniform: return "uniform";
    case WeightingScheme::Point: return "point";
    case WeightingScheme::Fused: return "fused";
  }
  return "fused";
}

std::optional<WeightingScheme> parse_scheme(std::string_view text) noexcept {
  if (text == "uniform") return WeightingScheme::Uniform;
  if (text == "point") return WeightingScheme::Point;
  if (text == "fused") return WeightingScheme::Fused;
  return std::nullopt;
}

std::optional<std::size_t> parse_k_mode(std::string_view text) {
  if (text == "dynamic") return std::nullopt;
  if (text.starts_with("fixed:")) {
    std::size_t k = 0;
    const auto digits = text.substr(6);
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), k);
    if (ec == std::errc{} && ptr == digits.data() + digits.size() && !digits.empty()) return k;
  }
  throw Error(ErrorCode::InvalidArgument,
              "k mode must be 'dynamic' or 'fixed:<n>', got '" + std::string(text) + "'");
}

std::pair<std::optional<Metric>, Metric> parse_metric_plan(std::string_view text) {
  const auto plus = text.find('+');
  const auto bad = [&] {
    return Error(ErrorCode::InvalidArgument, "unknown retrieval metric '" + std::string(text) + "'");
  };
  if (plus == std::string_view::npos) {
    auto m = parse_metric(text);
    if (!m) throw bad();
    return {std::nullopt, *m};
  }
  auto a = parse_metric(text.substr(0, plus));
  auto b = parse_metric(text.substr(plus + 1));
  if (!a || !b) throw bad();
  return {*a, *b};
}

EngineConfig EngineConfig::from_json_text(std::string_view text) {
  EngineConfig c;
  try {
    const json j = json::parse(text);
    reject_unknown(j,
                   {"history_len", "decay", "bins", "top_k", "stage1_multiplier",
                    "retrieval_metric", "weighting", "covariates", "backend", "replay_cache",
                    "backend_timeout_seconds", "loss", "k", "include_zero_probe", "chain_order",
                    "exclude_overlap", "scope", "threads", "seed", "eval_queries", "policy"},
                   "engine config");
    read_key(j, "history_len", c.history_len);
    read_key(j, "decay", c.decay);
    read_key(j, "bins", c.bins);
    read_key(j, "top_k", c.top_k);
    read_key(j, "stage1_multiplier", c.stage1_multiplier);
    if (auto it = j.find("retrieval_metric"); it != j.end()) {
      std::tie(c.stage1, c.stage2) = parse_metric_plan(it->get<std::string>());
    }
    if (auto it = j.find("weighting"); it != j.end()) {
      auto s = parse_scheme(it->get<std::string>());
      if (!s) throw Error(ErrorCode::InvalidConfig, "unknown weighting '" + it->get<std::string>() + "'");
      c.scheme = *s;
    }
    if (auto it = j.find("covariates"); it != j.end() && !it->is_null()) {
      c.covariates = it->get<std::vector<std::string>>();
    }
    read_key(j, "backend", c.backend);
    if (auto it = j.find("replay_cache"); it != j.end() && !it->is_null()) {
      c.replay_cache = it->get<std::string>();
    }
    read_key(j, "backend_timeout_seconds", c.backend_timeout_seconds);
    if (auto it = j.find("loss"); it != j.end()) {
      auto m = parse_loss_metric(it->get<std::string>());
      if (!m) throw Error(ErrorCode::InvalidConfig, "loss must be mse or mae");
      c.loss = *m;
    }
    if (auto it = j.find("k"); it != j.end()) c.fixed_k = parse_k_mode(it->get<std::string>());
    read_key(j, "include_zero_probe", c.include_zero_probe);
    if (auto it = j.find("chain_order"); it != j.end()) {
      const auto v = it->get<std::string>();
      if (v == "rank-one-adjacent") {
        c.chain_order = ChainOrder::RankOneAdjacent;
      } else if (v == "literal") {
        c.chain_order = ChainOrder::Literal;
      } else {
        throw Error(ErrorCode::InvalidConfig, "chain_order must be rank-one-adjacent or literal");
      }
    }
    read_key(j, "exclude_overlap", c.exclude_overlap);
    read_key(j, "scope", c.scope);
    read_key(j, "threads", c.threads);
    read_key(j, "seed", c.seed);
    read_key(j, "eval_queries", c.eval_queries);
    if (auto it = j.find("policy"); it != j.end()) {
      reject_unknown(*it,
                     {"window_days", "frequency_threshold", "percentile", "min_window_records",
                      "min_device_records"},
                     "policy");
      read_key(*it, "window_days", c.policy.window_days);
      read_key(*it, "frequency_threshold", c.policy.frequency_threshold);
      read_key(*it, "percentile", c.policy.percentile);
      read_key(*it, "min_window_records", c.policy.min_window_records);
      read_key(*it, "min_device_records", c.policy.min_device_records);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InvalidConfig) throw;
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
  c.validate();
  return c;
}

EngineConfig EngineConfig::from_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + file.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

std::string EngineConfig::to_json_text() const { return config_json(*this, true).dump(2); }

std::string EngineConfig::hash() const { return request_key(config_json(*this, false).dump()); }

void EngineConfig::validate() const {
  const auto bad = [](const std::string& why) { return Error(ErrorCode::InvalidConfig, why); };
  if (history_len == 0) throw bad("history_len must be positive");
  if (!(decay > 0.0 && decay <= 1.0)) throw bad("decay must lie in (0, 1]");
  if (top_k == 0) throw bad("top_k must be positive");
  if (stage1_multiplier == 0) throw bad("stage1_multiplier must be positive");
  if (fixed_k && *fixed_k > top_k) throw bad("fixed k exceeds top_k");
  if (!(backend_timeout_seconds > 0.0)) throw bad("backend timeout must be positive");
  if (threads == 0) throw bad("threads must be positive");
  if (eval_queries == 0) throw bad("eval_queries must be positive");
  if (!(policy.window_days > 0.0)) throw bad("policy window must be positive");
  if (!(policy.frequency_threshold > 0.0 && policy.frequency_threshold <= 1.0)) {
    throw bad("frequency threshold must lie in (0, 1]");
  }
  if (!(policy.percentile >= 0.0 && policy.percentile <= 1.0)) throw bad("percentile must lie in [0, 1]");
  if (!scope.empty() && scope != "@plane" && scope != "@group") {
    try {
      (void)HierarchicalPath::parse(scope);
    } catch (const Error& e) {
      throw bad("scope: " + std::string(e.what()));
    }
  }
}

Engine::Engine(const KnowledgeBase& kb, EngineConfig config)
    : Engine(kb, config,
             make_forecaster(config.backend,
                             BackendOptions{std::chrono::milliseconds(static_cast<long long>(
                                                config.backend_timeout_seconds * 1000.0)),
                                            config.replay_cache
                                                ? std::optional<std::filesystem::path>(
                                                      *config.replay_cache)
                                                : std::nullopt})) {}

Engine::Engine(const KnowledgeBase& kb, EngineConfig config,
               std::shared_ptr<const Forecaster> backend)
    : kb_(&kb), config_(std::move(config)), backend_(std::move(backend)) {
  config_.validate();
  if (kb.empty()) throw Error(ErrorCode::EmptyKB, "the knowledge base holds no samples");
  if (config_.history_len >= kb.regime_len()) {
    throw Error(ErrorCode::LengthMismatch, "history_len must leave a non-empty horizon");
  }
  const PointWeightConfig pw{config_.history_len, kb.regime_len() - config_.history_len,
                             config_.decay};
  const auto active = active_mask(kb.schema(), config_.covariates);
  weights_ = weights_for_scheme(config_.scheme, pw, kb, config_.bins, &active);
}

Query Engine::make_query(const Matrix& history, const Matrix& future_covariates) const {
  if (history.rows() != config_.history_len ||
      future_covariates.rows() != kb_->regime_len() - config_.history_len) {
    throw Error(ErrorCode::LengthMismatch, "query does not match history_len / horizon");
  }
  return regimerag::make_query(history, future_covariates, kb_->schema(), kb_->stats());
}

Query Engine::query_from_regime(const Matrix& regime) const {
  if (regime.rows() != kb_->regime_len()) {
    throw Error(ErrorCode::ShapeMismatch, "query regime length differs from the KB");
  }
  return regimerag::query_from_regime(regime, config_.history_len, kb_->schema(), kb_->stats());
}

KbView Engine::candidate_view(const QueryOrigin& origin) const {
  HierarchicalPath prefix;
  if (config_.scope == "@plane" || config_.scope == "@group") {
    if (!origin.path) throw Error(ErrorCode::InvalidArgument, "relative scope needs a query path");
    prefix = origin.path->prefix(config_.scope == "@plane" ? 2 : 1);
  } else {
    prefix = HierarchicalPath::parse(config_.scope);
  }
  KbView view = filter_scope(*kb_, prefix);
  if (config_.exclude_overlap && origin.time_range) {
    view = view.excluding_overlap(origin.time_range->first, origin.time_range->second);
  }
  return view;
}

RetrievalResult Engine::retrieve(const Query& query, const QueryOrigin& origin,
                                 std::size_t threads) const {
  RetrievalPlan plan;
  plan.stage1 = config_.stage1;
  plan.stage2 = config_.stage2;
  plan.k = config_.top_k;
  plan.stage1_multiplier = config_.stage1_multiplier;
  plan.threads = threads;
  return regimerag::retrieve(query, candidate_view(origin), weights_, plan);
}

AugmentationConfig Engine::augmentation_config(std::size_t threads) const {
  AugmentationConfig a;
  a.history_len = config_.history_len;
  a.metric = config_.loss;
  a.include_zero_probe = config_.include_zero_probe;
  a.order = config_.chain_order;
  a.alignment_weights = weights_.matrix;
  a.threads = threads;
  return a;
}

ForecastOutcome Engine::forecast(const Query& query, const QueryOrigin& origin,
                                 std::span<const double> truth, std::size_t threads) const {
  const auto result = retrieve(query, origin, threads);
  const auto aug = augmentation_config(threads);
  if (config_.fixed_k) {
    return augmented_forecast(query, result, *config_.fixed_k, *kb_, *backend_, aug, truth);
  }
  const auto cal = calibrate_k(result, *kb_, *backend_, aug);
  return augmented_forecast(query, result, cal, *kb_, *backend_, aug, truth);
}

std::vector<double> future_target(const Matrix& regime, std::size_t history_len,
                                  const VariableSchema& schema) {
  std::vector<double> out;
  for (std::size_t r = history_len; r < regime.rows(); ++r) {
    out.push_back(regime(r, schema.target_index()));
  }
  return out;
}

QueryCsv read_query_csv(std::istream& in, const VariableSchema& schema, std::size_t regime_len,
                        std::size_t history_len) {
  if (history_len == 0 || history_len >= regime_len) {
    throw Error(ErrorCode::LengthMismatch, "history_len must lie inside the regime");
  }
  std::string line;
  std::string expected = "timestamp";
  for (const auto& v : schema.variables()) expected += "," + v.name;
  if (!std::getline(in, line)) throw Error(ErrorCode::InvalidArgument, "empty query CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != expected) {
    throw Error(ErrorCode::ShapeMismatch, "query CSV header must be '" + expected + "'");
  }
  const std::size_t v = schema.size();
  const std::size_t target = schema.target_index();
  const auto covs = schema.covariate_indices();
  const std::size_t horizon = regime_len - history_len;

  QueryCsv q;
  q.history = Matrix(history_len, v);
  q.future_covariates = Matrix(horizon, covs.size());
  std::vector<double> truth;
  bool truth_complete = true;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (row >= regime_len) throw Error(ErrorCode::ShapeMismatch, "query CSV has too many rows");
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    if (line.back() == ',') fields.emplace_back();
    if (fields.size() != v + 1) {
      throw Error(ErrorCode::ShapeMismatch, "query CSV row " + std::to_string(row + 1) +
                                                " needs " + std::to_string(v + 1) + " fields");
    }
    const auto number = [&](const std::string& f, bool optional) -> std::optional<double> {
      if (optional && (f.empty() || f == "nan" || f == "NaN")) return std::nullopt;
      double x = 0.0;
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), x);
      if (ec != std::errc{} || ptr != f.data() + f.size()) {
        throw Error(ErrorCode::InvalidArgument, "query CSV: bad number '" + f + "'");
      }
      if (!std::isfinite(x)) throw Error(ErrorCode::NonFiniteValue, "query CSV: non-finite value");
      return x;
    };
    q.timestamps.push_back(*number(fields[0], false));
    const bool future = row >= history_len;
    for (std::size_t c = 0; c < v; ++c) {
      const bool unknown_ok = future && c == target;
      auto x = number(fields[c + 1], unknown_ok);
      if (!future) {
        q.history(row, c) = *x;
      } else if (c == target) {
        if (x) {
          truth.push_back(*x);
        } else {
          truth_complete = false;
        }
      } else {
        for (std::size_t j = 0; j < covs.size(); ++j) {
          if (covs[j] == c) q.future_covariates(row - history_len, j) = *x;
        }
      }
    }
    ++row;
  }
  if (row != regime_len) {
    throw Error(ErrorCode::ShapeMismatch, "query CSV needs " + std::to_string(regime_len) +
                                              " rows, got " + std::to_string(row));
  }
  for (std::size_t i = 1; i < q.timestamps.size(); ++i) {
    if (!(q.timestamps[i] > q.timestamps[i - 1])) {
      throw Error(ErrorCode::NonMonotonicTimestamps, "query CSV timestamps must increase");
    }
  }
  if (truth_complete) q.truth = std::move(truth);
  return q;
}

FleetConfig fleet_config_from_json_text(std::string_view text) {
  FleetConfig c;
  try {
    const json j = json::parse(text);
    reject_unknown(j,
                   {"seed", "group", "regime", "planes", "min_flights", "max_flights",
                    "regime_len", "sample_interval", "kb_start", "kb_days", "query_days",
                    "query_flights_per_day", "calibration_days", "noise_mp", "noise_ip",
                    "noise_n2", "coupling", "fault", "quantize"},
                   "fleet config");
    read_key(j, "seed", c.seed);
    read_key(j, "group", c.group);
    read_key(j, "regime", c.regime);
    read_key(j, "planes", c.planes);
    read_key(j, "min_flights", c.min_flights);
    read_key(j, "max_flights", c.max_flights);
    read_key(j, "regime_len", c.regime_len);
    read_key(j, "sample_interval", c.sample_interval);
    read_key(j, "kb_start", c.kb_start);
    read_key(j, "kb_days", c.kb_days);
    read_key(j, "query_days", c.query_days);
    read_key(j, "query_flights_per_day", c.query_flights_per_day);
    read_key(j, "calibration_days", c.calibration_days);
    read_key(j, "noise_mp", c.noise_mp);
    read_key(j, "noise_ip", c.noise_ip);
    read_key(j, "noise_n2", c.noise_n2);
    read_key(j, "quantize", c.quantize);
    if (auto it = j.find("coupling"); it != j.end()) {
      reject_unknown(*it, {"a", "b", "setpoint"}, "coupling");
      read_key(*it, "a", c.coupling.a);
      read_key(*it, "b", c.coupling.b);
      read_key(*it, "setpoint", c.coupling.setpoint);
    }
    if (auto it = j.find("fault"); it != j.end() && !it->is_null()) {
      reject_unknown(*it,
                     {"planes", "plane_count", "onset_day", "duration_days", "intermittency",
                      "magnitude", "first_row"},
                     "fault");
      FaultSpec f;
      read_key(*it, "planes", f.planes);
      if (auto n = it->find("plane_count"); n != it->end()) {
        if (it->contains("planes")) {
          throw Error(ErrorCode::InvalidConfig, "give either fault.planes or fault.plane_count");
        }
        f.planes = pick_fault_planes(c.seed, c.planes, n->get<std::size_t>());
      }
      read_key(*it, "onset_day", f.onset_day);
      read_key(*it, "duration_days", f.duration_days);
      read_key(*it, "intermittency", f.intermittency);
      read_key(*it, "magnitude", f.magnitude);
      read_key(*it, "first_row", f.first_row);
      c.fault = f;
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
  c.validate();
  return c;
}

}  // namespace regimerag
