#include "regimerag/regimerag.h"

#include <cstring>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "regimerag/error.hpp"
#include "regimerag/pipeline.hpp"

using nlohmann::json;
using namespace regimerag;

struct rr_kb {
  KnowledgeBase kb;
};

struct rr_engine {
  std::unique_ptr<Engine> engine;
};

namespace {

thread_local std::string g_error;
thread_local std::string g_error_kind;

rr_status status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::InvalidConfig:
    case ErrorCode::InvalidDecay:
      return RR_ERR_USAGE;
    case ErrorCode::BackendUnavailable:
    case ErrorCode::MalformedResponse:
      return RR_ERR_BACKEND;
    default:
      return RR_ERR_DATA;
  }
}

rr_status fail(rr_status status, std::string kind, std::string message) {
  g_error_kind = std::move(kind);
  g_error = std::move(message);
  return status;
}

template <typename Fn>
rr_status guard(Fn&& fn) {
  g_error.clear();
  g_error_kind.clear();
  try {
    fn();
    return RR_OK;
  } catch (const Error& e) {
    return fail(status_for(e.code()), std::string(to_string(e.code())), e.what());
  } catch (const json::exception& e) {
    return fail(RR_ERR_USAGE, "InvalidConfig", e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(RR_ERR_DATA, "Io", e.what());
  } catch (const std::exception& e) {
    return fail(RR_ERR_DATA, "Internal", e.what());
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::InvalidArgument, what);
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void set_out(char** out, const std::string& s) {
  if (out) *out = dup_string(s);
}

EngineConfig parse_config(const char* config_json) {
  if (!config_json || !*config_json) return EngineConfig{};
  return EngineConfig::from_json_text(config_json);
}

std::optional<HierarchicalPath> origin_of(const char* path) {
  if (!path || !*path) return std::nullopt;
  return HierarchicalPath::parse(path);
}

Matrix matrix_from(const double* data, std::size_t rows, std::size_t cols) {
  return Matrix(rows, cols, std::vector<double>(data, data + rows * cols));
}

json retrieval_json(const RetrievalResult& r) {
  json entries = json::array();
  for (const auto& e : r.entries) {
    entries.push_back({{"rank", e.rank},
                       {"path", e.path.str()},
                       {"stage1_score", e.stage1_score},
                       {"stage2_distance", e.stage2_distance}});
  }
  return {{"entries", entries},
          {"stage1_count", r.stage1_count},
          {"k_exceeded_view", r.k_exceeded_view}};
}

json outcome_json(const ForecastOutcome& o) {
  json chain = json::array();
  for (const auto& p : o.chain.paths) chain.push_back(p.str());
  json j{{"prediction", o.prediction},
         {"k_used", o.k_used},
         {"chain", chain},
         {"context_rows", o.chain.total_rows}};
  if (o.calibration) {
    json losses = json::array();
    for (const auto& [k, l] : o.calibration->losses) losses.push_back({k, l});
    j["calibration"] = {{"k_star", o.calibration->k_star},
                        {"losses", losses},
                        {"agent", o.calibration->agent_path ? json(o.calibration->agent_path->str())
                                                            : json(nullptr)},
                        {"insufficient_candidates", o.calibration->insufficient_candidates}};
  }
  if (o.deviation) j["deviation"] = *o.deviation;
  return j;
}

std::string chain_csv(const Engine& engine, const ForecastOutcome& o) {
  std::ostringstream out;
  write_chain_csv(out, o, engine.kb().schema(), engine.kb().regime_len());
  return out.str();
}

QueryCsv load_query_csv(const Engine& engine, const char* file) {
  require(file != nullptr, "query CSV path is null");
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::Io, std::string("cannot read ") + file);
  return read_query_csv(in, engine.kb().schema(), engine.kb().regime_len(),
                        engine.config().history_len);
}

// "-" selects standard output.
template <typename Fn>
void with_output(const char* path, Fn&& fn) {
  if (!path || !*path) return;
  if (std::string_view(path) == "-") {
    fn(std::cout);
    std::cout.flush();
    return;
  }
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, std::string("cannot write ") + path);
  fn(out);
  if (!out) throw Error(ErrorCode::Io, std::string("failed writing ") + path);
}

}  // namespace

extern "C" {

const char* rr_last_error(void) { return g_error.c_str(); }
const char* rr_last_error_kind(void) { return g_error_kind.c_str(); }
void rr_string_free(char* s) { std::free(s); }
const char* rr_version(void) { return "0.1.0"; }

rr_status rr_kb_create(size_t regime_len, rr_kb** out) {
  return guard([&] {
    require(out != nullptr, "out is null");
    require(regime_len >= 2, "regime length must be at least 2");
    *out = new rr_kb{KnowledgeBase(VariableSchema::prsov(), regime_len)};
  });
}

rr_status rr_kb_load(const char* dir, rr_kb** out) {
  return guard([&] {
    require(dir != nullptr && out != nullptr, "null argument");
    *out = new rr_kb{load_kb(dir)};
  });
}

rr_status rr_kb_save(const rr_kb* kb, const char* dir) {
  return guard([&] {
    require(kb != nullptr && dir != nullptr, "null argument");
    save_kb(kb->kb, dir);
  });
}

void rr_kb_free(rr_kb* kb) { delete kb; }
size_t rr_kb_size(const rr_kb* kb) { return kb ? kb->kb.size() : 0; }
size_t rr_kb_regime_len(const rr_kb* kb) { return kb ? kb->kb.regime_len() : 0; }
size_t rr_kb_variables(const rr_kb* kb) { return kb ? kb->kb.schema().size() : 0; }

rr_status rr_kb_ingest(rr_kb* kb, const char* path, const double* values, size_t rows, size_t cols,
                       const double* timestamps) {
  return guard([&] {
    require(kb && path && values && timestamps, "null argument");
    kb->kb.ingest(HierarchicalPath::parse(path), matrix_from(values, rows, cols),
                  std::vector<double>(timestamps, timestamps + rows));
  });
}

rr_status rr_kb_sample(const rr_kb* kb, const char* path, double* values, size_t capacity) {
  return guard([&] {
    require(kb && path && values, "null argument");
    const RegimeSample* s = kb->kb.find(HierarchicalPath::parse(path));
    if (!s) throw Error(ErrorCode::InvalidPath, std::string("no sample at ") + path);
    const auto flat = s->values.flat();
    require(capacity >= flat.size(), "output buffer too small");
    std::copy(flat.begin(), flat.end(), values);
  });
}

rr_status rr_kb_describe(const rr_kb* kb, char** json_out) {
  return guard([&] {
    require(kb && json_out, "null argument");
    const auto& k = kb->kb;
    json vars = json::array();
    for (std::size_t c = 0; c < k.schema().size(); ++c) {
      const auto& v = k.schema()[c];
      json entry{{"name", v.name},
                 {"role", v.role == VariableRole::Target ? "target" : "covariate"},
                 {"unit", v.unit}};
      if (!k.empty()) {
        entry["mean"] = k.stats().mean[c];
        entry["std"] = k.stats().stddev[c];
      }
      vars.push_back(entry);
    }
    json j{{"samples", k.size()}, {"regime_len", k.regime_len()}, {"variables", vars}};
    if (k.mi_cache()) j["mutual_information"] = {{"bins", k.mi_cache()->bins}, {"raw", k.mi_cache()->raw}};
    set_out(json_out, j.dump(2));
  });
}

rr_status rr_build_kb(const char* tree_dir, const char* out_dir, int truncate_tail,
                      size_t* samples_out) {
  return guard([&] {
    require(tree_dir && out_dir, "null argument");
    const std::filesystem::path tree(tree_dir);
    if (!std::filesystem::is_directory(tree)) {
      throw Error(ErrorCode::Io, std::string(tree_dir) + " is not a directory");
    }
    VariableSchema schema = VariableSchema::prsov();
    std::size_t regime_len = kDefaultRegimeLen;
    if (std::filesystem::exists(tree / kMetadataFile)) {
      const KnowledgeBase existing = load_kb(tree);
      schema = existing.schema();
      regime_len = existing.regime_len();
    }
    KnowledgeBase kb(schema, regime_len);
    IngestOptions opts;
    opts.truncate_tail = truncate_tail != 0;
    kb.ingest_batch(scan_sample_tree(tree, schema), opts);
    if (!kb.empty()) refresh_mi_cache(kb);
    save_kb(kb, out_dir);
    if (samples_out) *samples_out = kb.size();
  });
}

rr_status rr_engine_create(const rr_kb* kb, const char* config_json, rr_engine** out) {
  return guard([&] {
    require(kb && out, "null argument");
    *out = new rr_engine{std::make_unique<Engine>(kb->kb, parse_config(config_json))};
  });
}

void rr_engine_free(rr_engine* engine) { delete engine; }

size_t rr_engine_history_len(const rr_engine* engine) {
  return engine ? engine->engine->config().history_len : 0;
}

size_t rr_engine_horizon(const rr_engine* engine) {
  return engine ? engine->engine->kb().regime_len() - engine->engine->config().history_len : 0;
}

rr_status rr_engine_weights(const rr_engine* engine, double* weights, size_t capacity) {
  return guard([&] {
    require(engine && weights, "null argument");
    const auto flat = engine->engine->weights().matrix.flat();
    require(capacity >= flat.size(), "output buffer too small");
    std::copy(flat.begin(), flat.end(), weights);
  });
}

rr_status rr_retrieve(const rr_engine* engine, const double* history,
                      const double* future_covariates, const char* origin_path, char** json_out) {
  return guard([&] {
    require(engine && history && future_covariates && json_out, "null argument");
    const Engine& e = *engine->engine;
    const auto& schema = e.kb().schema();
    const Query q = e.make_query(
        matrix_from(history, e.config().history_len, schema.size()),
        matrix_from(future_covariates, rr_engine_horizon(engine), schema.size() - 1));
    const auto r = e.retrieve(q, QueryOrigin{origin_of(origin_path), std::nullopt},
                              e.config().threads);
    set_out(json_out, retrieval_json(r).dump(2));
  });
}

rr_status rr_forecast(const rr_engine* engine, const double* history,
                      const double* future_covariates, const char* origin_path, double* prediction,
                      size_t capacity, char** json_out, char** chain_csv_out) {
  return guard([&] {
    require(engine && history && future_covariates, "null argument");
    const Engine& e = *engine->engine;
    const auto& schema = e.kb().schema();
    const Query q = e.make_query(
        matrix_from(history, e.config().history_len, schema.size()),
        matrix_from(future_covariates, rr_engine_horizon(engine), schema.size() - 1));
    const auto o = e.forecast(q, QueryOrigin{origin_of(origin_path), std::nullopt}, {},
                              e.config().threads);
    if (prediction) {
      require(capacity >= o.prediction.size(), "prediction buffer too small");
      std::copy(o.prediction.begin(), o.prediction.end(), prediction);
    }
    set_out(json_out, outcome_json(o).dump(2));
    set_out(chain_csv_out, chain_csv(e, o));
  });
}

rr_status rr_retrieve_csv(const rr_engine* engine, const char* query_csv, const char* origin_path,
                          char** json_out) {
  return guard([&] {
    require(engine && json_out, "null argument");
    const Engine& e = *engine->engine;
    const auto qc = load_query_csv(e, query_csv);
    const Query q = e.make_query(qc.history, qc.future_covariates);
    const QueryOrigin origin{origin_of(origin_path),
                             std::pair{qc.timestamps.front(), qc.timestamps.back()}};
    set_out(json_out, retrieval_json(e.retrieve(q, origin, e.config().threads)).dump(2));
  });
}

rr_status rr_forecast_csv(const rr_engine* engine, const char* query_csv, const char* origin_path,
                          char** json_out, char** chain_csv_out) {
  return guard([&] {
    require(engine && json_out, "null argument");
    const Engine& e = *engine->engine;
    const auto qc = load_query_csv(e, query_csv);
    const Query q = e.make_query(qc.history, qc.future_covariates);
    const QueryOrigin origin{origin_of(origin_path),
                             std::pair{qc.timestamps.front(), qc.timestamps.back()}};
    std::span<const double> truth;
    if (qc.truth) truth = *qc.truth;
    const auto o = e.forecast(q, origin, truth, e.config().threads);
    set_out(json_out, outcome_json(o).dump(2));
    set_out(chain_csv_out, chain_csv(e, o));
  });
}

rr_status rr_synth(const char* fleet_config_json, const char* out_dir, char** summary_json) {
  return guard([&] {
    require(out_dir != nullptr, "output directory is null");
    const FleetConfig cfg = fleet_config_json && *fleet_config_json
                                ? fleet_config_from_json_text(fleet_config_json)
                                : FleetConfig{};
    const Fleet fleet = generate_fleet(cfg);
    write_fleet(fleet, cfg, out_dir);
    json faulty = json::array();
    if (cfg.fault) {
      for (std::size_t p : cfg.fault->planes) faulty.push_back(plane_name(p));
    }
    std::size_t faulty_flights = 0;
    for (const auto& q : fleet.queries) faulty_flights += q.faulty ? 1 : 0;
    set_out(summary_json, json{{"seed", cfg.seed},
                               {"kb_samples", fleet.kb_samples.size()},
                               {"query_flights", fleet.queries.size()},
                               {"faulty_flights", faulty_flights},
                               {"fault_planes", faulty}}
                              .dump());
  });
}

rr_status rr_evaluate(const char* suite, const char* kb_dir, const char* queries_dir,
                      const char* labels_csv, const char* config_json, const char* out_csv,
                      int force, char** table_text) {
  return guard([&] {
    require(suite && kb_dir && queries_dir, "null argument");
    const auto s = parse_suite(suite);
    if (!s) throw Error(ErrorCode::InvalidArgument, std::string("unknown suite '") + suite + "'");
    const EngineConfig cfg = parse_config(config_json);
    if (out_csv && *out_csv && !force && std::filesystem::exists(out_csv)) {
      throw Error(ErrorCode::InvalidArgument,
                  std::string(out_csv) + " exists; pass --force to overwrite results");
    }
    const KnowledgeBase kb = load_kb(kb_dir);
    const KnowledgeBase queries = load_kb(queries_dir);
    std::optional<std::vector<FlightLabel>> labels;
    if (labels_csv && *labels_csv) labels = read_labels(labels_csv);
    const auto result = run_suite(*s, kb, queries, labels ? &*labels : nullptr, cfg);
    const auto prov = provenance_line(std::string("suite=") + suite, cfg, result.queries);
    if (out_csv && *out_csv) {
      write_table_file(out_csv, result.table, prov, force != 0);
      if (result.k_histogram) {
        std::filesystem::path hist(out_csv);
        hist.replace_filename(hist.stem().string() + "_kstar" + hist.extension().string());
        write_table_file(hist, *result.k_histogram, prov, force != 0);
      }
    }
    if (table_text) {
      std::ostringstream text;
      text << prov << '\n';
      write_table_text(text, result.table);
      if (result.k_histogram) {
        text << '\n';
        write_table_text(text, *result.k_histogram);
      }
      *table_text = dup_string(text.str());
    }
  });
}

rr_status rr_detect(const char* kb_dir, const char* queries_dir, const char* labels_csv,
                    const char* config_json, const char* policy, const char* alerts_out,
                    const char* timeline_out, const char* policy_out, size_t* alerts) {
  return guard([&] {
    require(kb_dir && queries_dir && labels_csv, "detect needs --kb, --queries and --labels");
    const EngineConfig cfg = parse_config(config_json);
    std::optional<PrecursorPolicy> fixed;
    if (policy && *policy && std::string_view(policy) != "default") fixed = load_policy(policy);
    const KnowledgeBase kb = load_kb(kb_dir);
    const KnowledgeBase flights = load_kb(queries_dir);
    const auto labels = read_labels(labels_csv);
    const auto report = run_detection(kb, flights, labels, cfg, fixed);
    with_output(alerts_out, [&](std::ostream& out) {
      for (const auto& a : report.alerts) write_alert_jsonl(out, a);
    });
    with_output(timeline_out, [&](std::ostream& out) {
      write_timeline_csv(out, report.monitored, report.policy);
    });
    if (policy_out && *policy_out) save_policy(report.policy, policy_out);
    if (alerts) *alerts = report.alerts.size();
  });
}

rr_status rr_detect_stream(const char* deviation_csv, const char* policy_file,
                           const char* alerts_out, size_t* alerts) {
  return guard([&] {
    require(deviation_csv && policy_file, "stream detection needs a CSV and a policy file");
    const PrecursorPolicy policy = load_policy(policy_file);
    std::vector<DeviationRecord> records;
    if (std::string_view(deviation_csv) == "-") {
      records = read_deviation_csv(std::cin);
    } else {
      std::ifstream in(deviation_csv);
      if (!in) throw Error(ErrorCode::Io, std::string("cannot read ") + deviation_csv);
      records = read_deviation_csv(in);
    }
    // Stream order is the caller's: out-of-order records are reported, not sorted away.
    PrecursorMonitor monitor(policy);
    std::vector<PrecursorAlert> fired;
    for (const auto& r : records) {
      if (auto a = monitor.update(r)) fired.push_back(std::move(*a));
    }
    with_output(alerts_out, [&](std::ostream& out) {
      for (const auto& a : fired) write_alert_jsonl(out, a);
    });
    if (alerts) *alerts = fired.size();
  });
}

}  // extern "C"
