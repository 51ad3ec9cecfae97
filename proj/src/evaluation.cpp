#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <unordered_map>

#include "parallel.hpp"
#include "regimerag/error.hpp"
#include "regimerag/pipeline.hpp"

namespace regimerag {

namespace {

using KMode = std::optional<std::size_t>;  // nullopt = agent-calibrated

struct QueryScore {
  std::vector<double> mse;  // per mode
  std::vector<double> mae;
  std::size_t k_star = 0;
};

struct ModeMeans {
  std::vector<double> mse;
  std::vector<double> mae;
  std::vector<std::size_t> k_stars;  // per query, when a dynamic mode was run
};

// Retrieval and calibration run once per query; every mode reuses them.
ModeMeans evaluate_modes(const Engine& engine, const KnowledgeBase& flights,
                         std::span<const std::size_t> indices, std::span<const KMode> modes,
                         std::size_t threads) {
  const KnowledgeBase& kb = engine.kb();
  const auto& cfg = engine.config();
  const double scale = kb.stats().scale(kb.schema().target_index());
  const bool any_dynamic =
      std::any_of(modes.begin(), modes.end(), [](const KMode& m) { return !m.has_value(); });
  std::vector<QueryScore> scores(indices.size());

  detail::parallel_for(indices.size(), threads, [&](std::size_t begin, std::size_t end) {
    const auto aug = engine.augmentation_config(1);
    for (std::size_t i = begin; i < end; ++i) {
      const RegimeSample& s = flights.sample(indices[i]);
      const Query q = engine.query_from_regime(s.values);
      const auto truth = future_target(s.values, cfg.history_len, kb.schema());
      const QueryOrigin origin{s.path, std::pair{s.start_time(), s.end_time()}};
      const auto result = engine.retrieve(q, origin, 1);
      std::optional<AgentCalibration> cal;
      if (any_dynamic) cal = calibrate_k(result, kb, engine.backend(), aug);

      QueryScore& sc = scores[i];
      sc.k_star = cal ? cal->k_star : 0;
      for (const auto& mode : modes) {
        const std::size_t k = mode ? *mode : cal->k_star;
        const auto out = augmented_forecast(q, result, k, kb, engine.backend(), aug);
        sc.mse.push_back(loss(out.prediction, truth, LossMetric::MSE, scale));
        sc.mae.push_back(loss(out.prediction, truth, LossMetric::MAE, scale));
      }
    }
  });

  ModeMeans means;
  means.mse.assign(modes.size(), 0.0);
  means.mae.assign(modes.size(), 0.0);
  for (const auto& sc : scores) {
    for (std::size_t m = 0; m < modes.size(); ++m) {
      means.mse[m] += sc.mse[m];
      means.mae[m] += sc.mae[m];
    }
    if (any_dynamic) means.k_stars.push_back(sc.k_star);
  }
  const auto n = static_cast<double>(std::max<std::size_t>(1, scores.size()));
  for (std::size_t m = 0; m < modes.size(); ++m) {
    means.mse[m] /= n;
    means.mae[m] /= n;
  }
  return means;
}

std::string k_label(const KMode& k) { return k ? "k=" + std::to_string(*k) : "dynamic"; }

ResultTable loss_table(std::string row_header) {
  ResultTable t;
  t.row_header = std::move(row_header);
  t.columns = {"mse", "mae"};
  return t;
}

}  // namespace

std::vector<std::size_t> select_eval_queries(const KnowledgeBase& queries,
                                             const std::vector<FlightLabel>* labels,
                                             std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> eligible;
  if (labels) {
    std::unordered_map<std::string, const FlightLabel*> by_path;
    for (const auto& l : *labels) by_path.emplace(l.path.str(), &l);
    for (std::size_t i = 0; i < queries.size(); ++i) {
      auto it = by_path.find(queries.sample(i).path.str());
      if (it != by_path.end() && it->second->split == Split::Query && !it->second->faulty) {
        eligible.push_back(i);
      }
    }
  } else {
    for (std::size_t i = 0; i < queries.size(); ++i) eligible.push_back(i);
  }
  // Partial Fisher-Yates with the portable generator.
  PortableRng rng(PortableRng::derive(seed, 0x71756572ULL));
  const std::size_t take = std::min(count, eligible.size());
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + rng.below(eligible.size() - i);
    std::swap(eligible[i], eligible[j]);
  }
  eligible.resize(take);
  return eligible;
}

const std::vector<double>& ResultTable::row(std::string_view label) const {
  for (const auto& [name, cells] : rows) {
    if (name == label) return cells;
  }
  throw Error(ErrorCode::InvalidArgument, "no row '" + std::string(label) + "'");
}

double ResultTable::cell(std::string_view row_label, std::string_view column) const {
  const auto& r = row(row_label);
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (columns[c] == column) return r[c];
  }
  throw Error(ErrorCode::InvalidArgument, "no column '" + std::string(column) + "'");
}

std::string_view to_string(Suite s) noexcept {
  switch (s) {
    case Suite::Weighting: return "weighting";
    case Suite::Metric: return "metric";
    case Suite::KbScope: return "kb-scope";
    case Suite::ContextK: return "context-k";
    case Suite::Covariate: return "covariate";
  }
  return "weighting";
}

std::optional<Suite> parse_suite(std::string_view text) noexcept {
  for (Suite s : {Suite::Weighting, Suite::Metric, Suite::KbScope, Suite::ContextK,
                  Suite::Covariate}) {
    if (to_string(s) == text) return s;
  }
  return std::nullopt;
}

SuiteResult run_suite(Suite suite, const KnowledgeBase& kb, const KnowledgeBase& queries,
                      const std::vector<FlightLabel>* labels, const EngineConfig& config) {
  config.validate();
  const auto indices = select_eval_queries(queries, labels, config.eval_queries, config.seed);
  if (indices.empty()) throw Error(ErrorCode::EmptyView, "no eligible evaluation queries");
  const KMode configured = config.fixed_k;
  const std::vector<KMode> single{configured};
  const std::size_t threads = config.threads;

  // One backend instance shared by every engine in the grid.
  const Engine base(kb, config);
  const auto backend = std::shared_ptr<const Forecaster>(&base.backend(), [](const Forecaster*) {});
  const auto engine_with = [&](auto&& edit) {
    EngineConfig c = config;
    edit(c);
    return Engine(kb, c, backend);
  };

  SuiteResult out;
  out.suite = suite;
  out.queries = indices.size();

  switch (suite) {
    case Suite::Weighting: {
      std::vector<KMode> modes;
      for (std::size_t k : {0, 1, 2, 3, 6, 9, 12}) {
        if (k <= config.top_k) modes.emplace_back(k);
      }
      modes.emplace_back(std::nullopt);
      out.table.row_header = "k";
      const WeightingScheme schemes[] = {WeightingScheme::Uniform, WeightingScheme::Point,
                                         WeightingScheme::Fused};
      std::vector<ModeMeans> per_scheme;
      for (WeightingScheme s : schemes) {
        out.table.columns.push_back(std::string(to_string(s)) + "_mse");
        out.table.columns.push_back(std::string(to_string(s)) + "_mae");
        const Engine e = engine_with([&](EngineConfig& c) { c.scheme = s; });
        per_scheme.push_back(evaluate_modes(e, queries, indices, modes, threads));
      }
      for (std::size_t m = 0; m < modes.size(); ++m) {
        std::vector<double> cells;
        for (const auto& pm : per_scheme) {
          cells.push_back(pm.mse[m]);
          cells.push_back(pm.mae[m]);
        }
        out.table.rows.emplace_back(k_label(modes[m]), std::move(cells));
      }
      break;
    }
    case Suite::Metric: {
      out.table = loss_table("metric");
      const std::pair<std::optional<Metric>, Metric> plans[] = {
          {std::nullopt, Metric::Cosine},
          {std::nullopt, Metric::Euclidean},
          {std::nullopt, Metric::MatrixProfile},
          {Metric::Cosine, Metric::Euclidean},
          {Metric::Cosine, Metric::MatrixProfile},
          {Metric::Euclidean, Metric::MatrixProfile},
      };
      for (const auto& [s1, s2] : plans) {
        const Engine e = engine_with([&](EngineConfig& c) {
          c.stage1 = s1;
          c.stage2 = s2;
        });
        const auto mm = evaluate_modes(e, queries, indices, single, threads);
        std::string label = s1 ? std::string(to_string(*s1)) + "+" : "";
        label += to_string(s2);
        out.table.rows.emplace_back(label, std::vector<double>{mm.mse[0], mm.mae[0]});
      }
      break;
    }
    case Suite::KbScope: {
      out.table = loss_table("scope");
      const std::pair<const char*, const char*> scopes[] = {
          {"same-plane", "@plane"}, {"same-group", "@group"}, {"full-kb", ""}};
      for (const auto& [label, scope] : scopes) {
        const Engine e = engine_with([&](EngineConfig& c) { c.scope = scope; });
        const auto mm = evaluate_modes(e, queries, indices, single, threads);
        out.table.rows.emplace_back(label, std::vector<double>{mm.mse[0], mm.mae[0]});
      }
      break;
    }
    case Suite::ContextK: {
      out.table = loss_table("k");
      std::vector<KMode> modes;
      for (std::size_t k = 0; k <= config.top_k; ++k) modes.emplace_back(k);
      modes.emplace_back(std::nullopt);
      const auto mm = evaluate_modes(base, queries, indices, modes, threads);
      for (std::size_t m = 0; m < modes.size(); ++m) {
        out.table.rows.emplace_back(k_label(modes[m]), std::vector<double>{mm.mse[m], mm.mae[m]});
      }
      ResultTable hist;
      hist.row_header = "k_star";
      hist.columns = {"count"};
      std::vector<double> counts(config.top_k + 1, 0.0);
      for (std::size_t k : mm.k_stars) counts[std::min(k, config.top_k)] += 1.0;
      for (std::size_t k = 0; k < counts.size(); ++k) {
        hist.rows.emplace_back(std::to_string(k), std::vector<double>{counts[k]});
      }
      out.k_histogram = std::move(hist);
      break;
    }
    case Suite::Covariate: {
      out.table = loss_table("covariates");
      const auto& schema = kb.schema();
      std::vector<std::pair<std::string, std::vector<std::string>>> subsets;
      subsets.emplace_back("none", std::vector<std::string>{});
      for (std::size_t c : schema.covariate_indices()) {
        subsets.emplace_back("only-" + schema[c].name, std::vector<std::string>{schema[c].name});
      }
      std::vector<std::string> all;
      for (std::size_t c : schema.covariate_indices()) all.push_back(schema[c].name);
      subsets.emplace_back("full", all);
      for (const auto& [label, names] : subsets) {
        const Engine e = engine_with([&](EngineConfig& c) { c.covariates = names; });
        const auto mm = evaluate_modes(e, queries, indices, single, threads);
        out.table.rows.emplace_back(label, std::vector<double>{mm.mse[0], mm.mae[0]});
      }
      break;
    }
  }
  return out;
}

std::string provenance_line(std::string_view what, const EngineConfig& config,
                            std::size_t queries) {
  return "# regimerag " + std::string(what) + " seed=" + std::to_string(config.seed) +
         " config=" + config.hash() + " queries=" + std::to_string(queries);
}

void write_table_csv(std::ostream& out, const ResultTable& table, std::string_view provenance) {
  out << provenance << '\n' << table.row_header;
  for (const auto& c : table.columns) out << ',' << c;
  out << '\n';
  for (const auto& [label, cells] : table.rows) {
    out << label;
    for (double v : cells) out << ',' << format_exact(v);
    out << '\n';
  }
}

void write_table_text(std::ostream& out, const ResultTable& table) {
  std::size_t first = table.row_header.size();
  for (const auto& r : table.rows) first = std::max(first, r.first.size());
  out << std::left << std::setw(static_cast<int>(first + 2)) << table.row_header;
  for (const auto& c : table.columns) out << std::right << std::setw(14) << c;
  out << '\n';
  for (const auto& [label, cells] : table.rows) {
    out << std::left << std::setw(static_cast<int>(first + 2)) << label;
    for (double v : cells) {
      out << std::right << std::setw(14) << std::fixed << std::setprecision(6) << v;
    }
    out << std::defaultfloat << '\n';
  }
}

void write_table_file(const std::filesystem::path& file, const ResultTable& table,
                      std::string_view provenance, bool force) {
  if (!force && std::filesystem::exists(file)) {
    throw Error(ErrorCode::InvalidArgument,
                file.string() + " exists; pass --force to overwrite results");
  }
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + file.string());
  write_table_csv(out, table, provenance);
  if (!out) throw Error(ErrorCode::Io, "failed writing " + file.string());
}

}  // namespace regimerag
