#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "regimerag/regimerag.h"

namespace {

using nlohmann::json;

struct Globals {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::string kb;
  std::optional<std::size_t> threads;
  std::optional<std::string> scope;
};

// Thrown for usage problems found after parsing.
struct UsageError {
  std::string message;
};

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

int report(rr_status status) {
  if (status != RR_OK) {
    std::cerr << "regimerag: error: " << one_line(rr_last_error()) << '\n';
  }
  return static_cast<int>(status);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError{"cannot read " + path};
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

json base_config(const Globals& g) {
  json j = json::object();
  if (!g.config_file.empty()) {
    try {
      j = json::parse(read_file(g.config_file));
    } catch (const json::exception& e) {
      throw UsageError{g.config_file + ": " + e.what()};
    }
    if (!j.is_object()) throw UsageError{g.config_file + ": config must be a JSON object"};
  }
  if (g.seed) j["seed"] = *g.seed;
  if (g.threads) j["threads"] = *g.threads;
  if (g.scope) j["scope"] = *g.scope;
  return j;
}

void require_kb(const Globals& g) {
  if (g.kb.empty()) throw UsageError{"--kb <dir> is required"};
}

struct OwnedString {
  char* p = nullptr;
  ~OwnedString() { rr_string_free(p); }
};

struct KbHandle {
  rr_kb* p = nullptr;
  ~KbHandle() { rr_kb_free(p); }
};

struct EngineHandle {
  rr_engine* p = nullptr;
  ~EngineHandle() { rr_engine_free(p); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"regimerag: retrieval-augmented forecasting for short covariate regimes"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_file, "Engine config JSON file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed (fleet generation and query sampling)");
  app.add_option("--kb", g.kb, "Knowledge base directory");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--scope", g.scope, "Path prefix, or @plane / @group relative to each query");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a seeded synthetic fleet");
  std::string synth_out, fleet_config;
  std::optional<std::size_t> planes, fault_planes;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--fleet-config", fleet_config, "Fleet config JSON file")
      ->check(CLI::ExistingFile);
  synth->add_option("--planes", planes, "Number of planes");
  synth->add_option("--fault-planes", fault_planes, "Inject faults into this many seeded planes");

  // build-kb
  auto* build = app.add_subcommand("build-kb", "Build a knowledge base from a sample CSV tree");
  std::string tree;
  bool truncate_tail = false;
  build->add_option("--from", tree, "Directory of <group>/<device>/<regime>/<id>.csv")->required();
  build->add_flag("--truncate-tail", truncate_tail, "Keep the last regime_len rows of longer samples");

  // retrieve / forecast
  auto* retrieve = app.add_subcommand("retrieve", "Top-K retrieval for one query CSV");
  auto* forecast = app.add_subcommand("forecast", "Retrieval-augmented forecast for one query CSV");
  std::string query_csv, origin, k_mode, backend, metric, emit_chain, result_out;
  for (auto* sub : {retrieve, forecast}) {
    sub->add_option("--query", query_csv, "Query CSV (timestamp + variables)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--origin", origin, "Path of the query flight (for relative scopes)");
    sub->add_option("--metric", metric, "Retrieval metric, e.g. cosine+matrix-profile");
    sub->add_option("--out", result_out, "Write the JSON result here instead of stdout");
  }
  forecast->add_option("--k", k_mode, "fixed:<n> or dynamic");
  forecast->add_option("--backend", backend,
                       "persistence | covariate-regression | nearest-context | external:<cmd> | replay");
  forecast->add_option("--emit-chain", emit_chain, "Write the spliced context as CSV");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Run an ablation suite");
  std::string suite, queries, labels, eval_out;
  bool force = false;
  evaluate->add_option("--suite", suite, "weighting | metric | kb-scope | context-k | covariate")
      ->required();
  evaluate->add_option("--queries", queries, "Query store directory")->required();
  evaluate->add_option("--labels", labels, "labels.csv from synth");
  evaluate->add_option("--out", eval_out, "Result CSV");
  evaluate->add_option("--backend", backend, "Forecaster backend");
  evaluate->add_flag("--force", force, "Overwrite an existing result CSV");

  // detect
  auto* detect = app.add_subcommand("detect", "Fault-precursor alerting");
  std::string policy = "default", alerts_out = "-", timeline_out, save_policy, stream;
  detect->add_option("--queries", queries, "Query store directory");
  detect->add_option("--labels", labels, "labels.csv with calibration / query splits");
  detect->add_option("--policy", policy, "'default' (calibrate) or a policy JSON file");
  detect->add_option("--alerts", alerts_out, "Alert JSON lines ('-' for stdout)");
  detect->add_option("--timeline", timeline_out, "Per-device deviation timeline CSV");
  detect->add_option("--save-policy", save_policy, "Write the policy in effect");
  detect->add_option("--stream", stream, "Monitor a device,timestamp,deviation CSV instead");
  detect->add_option("--backend", backend, "Forecaster backend");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "regimerag: usage: " << one_line(e.what()) << '\n';
    return RR_ERR_USAGE;
  }

  try {
    if (*synth) {
      json fc = json::object();
      if (!fleet_config.empty()) fc = json::parse(read_file(fleet_config));
      if (g.seed) fc["seed"] = *g.seed;
      if (planes) fc["planes"] = *planes;
      if (fault_planes) {
        json fault = fc.contains("fault") && fc["fault"].is_object() ? fc["fault"] : json::object();
        fault.erase("planes");
        fault["plane_count"] = *fault_planes;
        fc["fault"] = fault;
      }
      OwnedString summary;
      const int rc = report(rr_synth(fc.dump().c_str(), synth_out.c_str(), &summary.p));
      if (rc == 0) std::cout << summary.p << '\n';
      return rc;
    }

    if (*build) {
      require_kb(g);
      std::size_t n = 0;
      const int rc = report(rr_build_kb(tree.c_str(), g.kb.c_str(), truncate_tail ? 1 : 0, &n));
      if (rc == 0) std::cout << "built " << g.kb << " with " << n << " samples\n";
      return rc;
    }

    json cfg = base_config(g);
    if (!backend.empty()) cfg["backend"] = backend;
    if (!metric.empty()) cfg["retrieval_metric"] = metric;
    if (!k_mode.empty()) cfg["k"] = k_mode;
    const std::string cfg_text = cfg.dump();

    if (*retrieve || *forecast) {
      require_kb(g);
      KbHandle kb;
      if (int rc = report(rr_kb_load(g.kb.c_str(), &kb.p))) return rc;
      EngineHandle engine;
      if (int rc = report(rr_engine_create(kb.p, cfg_text.c_str(), &engine.p))) return rc;
      OwnedString result, chain;
      const char* origin_c = origin.empty() ? nullptr : origin.c_str();
      int rc = 0;
      if (*retrieve) {
        rc = report(rr_retrieve_csv(engine.p, query_csv.c_str(), origin_c, &result.p));
      } else {
        rc = report(rr_forecast_csv(engine.p, query_csv.c_str(), origin_c, &result.p,
                                    emit_chain.empty() ? nullptr : &chain.p));
      }
      if (rc != 0) return rc;
      if (!emit_chain.empty()) {
        std::ofstream out(emit_chain);
        if (!out) throw UsageError{"cannot write " + emit_chain};
        out << chain.p;
      }
      if (result_out.empty()) {
        std::cout << result.p << '\n';
      } else {
        std::ofstream out(result_out);
        if (!out) throw UsageError{"cannot write " + result_out};
        out << result.p << '\n';
      }
      return 0;
    }

    if (*evaluate) {
      require_kb(g);
      OwnedString text;
      const int rc = report(rr_evaluate(suite.c_str(), g.kb.c_str(), queries.c_str(),
                                        labels.empty() ? nullptr : labels.c_str(),
                                        cfg_text.c_str(), eval_out.empty() ? nullptr : eval_out.c_str(),
                                        force ? 1 : 0, &text.p));
      if (rc == 0) std::cout << text.p;
      return rc;
    }

    if (*detect) {
      std::size_t n = 0;
      int rc = 0;
      if (!stream.empty()) {
        if (policy == "default") throw UsageError{"--stream needs --policy <file>"};
        rc = report(rr_detect_stream(stream.c_str(), policy.c_str(), alerts_out.c_str(), &n));
      } else {
        require_kb(g);
        if (queries.empty() || labels.empty()) throw UsageError{"detect needs --queries and --labels"};
        rc = report(rr_detect(g.kb.c_str(), queries.c_str(), labels.c_str(), cfg_text.c_str(),
                              policy.c_str(), alerts_out.c_str(),
                              timeline_out.empty() ? nullptr : timeline_out.c_str(),
                              save_policy.empty() ? nullptr : save_policy.c_str(), &n));
      }
      if (rc == 0) std::cerr << n << " alert(s)\n";
      return rc;
    }
  } catch (const UsageError& e) {
    std::cerr << "regimerag: usage: " << one_line(e.message) << '\n';
    return RR_ERR_USAGE;
  } catch (const json::exception& e) {
    std::cerr << "regimerag: usage: " << one_line(e.what()) << '\n';
    return RR_ERR_USAGE;
  }
  return RR_ERR_USAGE;
}
