#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "regimerag/error.hpp"
#include "regimerag/kb.hpp"

namespace regimerag {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_value(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 9);
  return std::string(buf, res.ptr);
}

std::string format_exact(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double quantize_value(double v) {
  const std::string text = format_value(v);
  double out = 0.0;
  std::from_chars(text.data(), text.data() + text.size(), out);
  return out;
}

namespace {

std::string_view role_name(VariableRole role) {
  return role == VariableRole::Target ? "target" : "covariate";
}

json schema_to_json(const VariableSchema& schema) {
  json arr = json::array();
  for (const auto& v : schema.variables()) {
    arr.push_back({{"name", v.name}, {"role", role_name(v.role)}, {"unit", v.unit}});
  }
  return arr;
}

VariableSchema schema_from_json(const json& j) {
  std::vector<Variable> vars;
  for (const auto& item : j) {
    const std::string role = item.at("role").get<std::string>();
    if (role != "target" && role != "covariate") {
      throw Error(ErrorCode::CorruptStore, "unknown variable role '" + role + "'");
    }
    vars.push_back({item.at("name").get<std::string>(),
                    role == "target" ? VariableRole::Target : VariableRole::Covariate,
                    item.value("unit", std::string{})});
  }
  return VariableSchema(std::move(vars));
}

fs::path sample_file(const fs::path& root, const HierarchicalPath& path) {
  fs::path p = root;
  const auto& segs = path.segments();
  for (std::size_t i = 0; i + 1 < segs.size(); ++i) p /= segs[i];
  return p / (segs.back() + ".csv");
}

void write_sample_csv(const fs::path& file, const VariableSchema& schema, const RegimeSample& s) {
  std::string text = "timestamp";
  for (const auto& v : schema.variables()) {
    text += ',';
    text += v.name;
  }
  text += '\n';
  for (std::size_t r = 0; r < s.values.rows(); ++r) {
    text += format_exact(s.timestamps[r]);
    for (std::size_t c = 0; c < s.values.cols(); ++c) {
      text += ',';
      text += format_value(s.values(r, c));
    }
    text += '\n';
  }
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + file.string());
  out << text;
  if (!out) throw Error(ErrorCode::Io, "write failed for " + file.string());
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_number(std::string_view field, const fs::path& file) {
  double v = 0.0;
  auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc{} || res.ptr != field.data() + field.size() || !std::isfinite(v)) {
    throw Error(ErrorCode::CorruptStore,
                file.string() + ": bad numeric field '" + std::string(field) + "'");
  }
  return v;
}

}  // namespace

RegimeSample read_sample_csv(const fs::path& file, const VariableSchema& schema,
                             const HierarchicalPath& path) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(ErrorCode::CorruptStore, "missing sample file " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();

  std::vector<std::string_view> lines;
  std::string_view rest(text);
  while (!rest.empty()) {
    auto nl = rest.find('\n');
    auto line = rest.substr(0, nl);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) lines.push_back(line);
    if (nl == std::string_view::npos) break;
    rest.remove_prefix(nl + 1);
  }
  if (lines.empty()) throw Error(ErrorCode::CorruptStore, file.string() + ": empty file");

  const auto header = split_fields(lines[0]);
  if (header.size() != schema.size() + 1 || header[0] != "timestamp") {
    throw Error(ErrorCode::CorruptStore, file.string() + ": header does not match schema");
  }
  for (std::size_t c = 0; c < schema.size(); ++c) {
    if (header[c + 1] != schema[c].name) {
      throw Error(ErrorCode::CorruptStore, file.string() + ": column '" + std::string(header[c + 1]) +
                                               "' is not schema variable '" + schema[c].name + "'");
    }
  }

  const std::size_t rows = lines.size() - 1;
  Matrix values(rows, schema.size());
  std::vector<double> timestamps(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto fields = split_fields(lines[r + 1]);
    if (fields.size() != schema.size() + 1) {
      throw Error(ErrorCode::CorruptStore, file.string() + ": wrong field count on row " +
                                               std::to_string(r + 1));
    }
    timestamps[r] = parse_number(fields[0], file);
    for (std::size_t c = 0; c < schema.size(); ++c) values(r, c) = parse_number(fields[c + 1], file);
  }
  return RegimeSample{path, std::move(values), std::move(timestamps)};
}

void save_kb(const KnowledgeBase& kb, const fs::path& root) {
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + root.string() + ": " + ec.message());

  json index = json::array();
  for (const auto& s : kb.samples()) {
    const fs::path file = sample_file(root, s.path);
    fs::create_directories(file.parent_path(), ec);
    if (ec) throw Error(ErrorCode::Io, "cannot create " + file.parent_path().string());
    write_sample_csv(file, kb.schema(), s);
    index.push_back(s.path.str());
  }

  json meta;
  meta["format"] = "regimerag-kb";
  meta["format_version"] = kStoreFormatVersion;
  meta["regime_len"] = kb.regime_len();
  meta["schema"] = schema_to_json(kb.schema());
  meta["statistics"] = {{"count", kb.size()},
                        {"mean", kb.stats().mean},
                        {"std", kb.stats().stddev}};
  if (kb.mi_cache()) {
    meta["mutual_information"] = {{"bins", kb.mi_cache()->bins}, {"raw", kb.mi_cache()->raw}};
  }
  meta["samples"] = std::move(index);

  std::ofstream out(root / kMetadataFile, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write metadata in " + root.string());
  out << meta.dump(1) << '\n';
}

namespace {

bool close_enough(double a, double b) {
  return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(a));
}

}  // namespace

KnowledgeBase load_kb(const fs::path& root) {
  const fs::path meta_file = root / kMetadataFile;
  std::ifstream in(meta_file, std::ios::binary);
  if (!in) throw Error(ErrorCode::CorruptStore, "no metadata document at " + meta_file.string());

  json meta;
  try {
    in >> meta;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptStore, meta_file.string() + ": " + e.what());
  }

  try {
    if (meta.value("format", std::string{}) != "regimerag-kb") {
      throw Error(ErrorCode::CorruptStore, meta_file.string() + ": not a regimerag store");
    }
    const int version = meta.at("format_version").get<int>();
    if (version != kStoreFormatVersion) {
      throw Error(ErrorCode::VersionMismatch, "store format " + std::to_string(version) +
                                                  ", expected " +
                                                  std::to_string(kStoreFormatVersion));
    }
    VariableSchema schema = [&] {
      try {
        return schema_from_json(meta.at("schema"));
      } catch (const Error& e) {
        throw Error(ErrorCode::CorruptStore, e.what());
      }
    }();
    KnowledgeBase kb(schema, meta.at("regime_len").get<std::size_t>());

    std::vector<RegimeSample> samples;
    for (const auto& entry : meta.at("samples")) {
      const auto path = HierarchicalPath::parse(entry.get<std::string>());
      if (path.depth() != kPathDepth) {
        throw Error(ErrorCode::CorruptStore, "bad sample path '" + path.str() + "'");
      }
      samples.push_back(read_sample_csv(sample_file(root, path), schema, path));
    }
    try {
      kb.ingest_batch(std::move(samples));
    } catch (const Error& e) {
      throw Error(ErrorCode::CorruptStore, e.what());
    }

    const auto& st = meta.at("statistics");
    const auto mean = st.at("mean").get<std::vector<double>>();
    const auto sd = st.at("std").get<std::vector<double>>();
    if (st.at("count").get<std::size_t>() != kb.size() || mean.size() != schema.size() ||
        sd.size() != schema.size()) {
      throw Error(ErrorCode::CorruptStore, "statistics block does not match samples");
    }
    for (std::size_t c = 0; c < schema.size(); ++c) {
      if (!close_enough(mean[c], kb.stats().mean[c]) || !close_enough(sd[c], kb.stats().stddev[c])) {
        throw Error(ErrorCode::CorruptStore,
                    "stored statistics for '" + schema[c].name + "' differ from re-derived values");
      }
      if (kb.size() >= 2 && kb.stats().zero_variance(c)) {
        spdlog::warn("loaded store: variable '{}' is constant", schema[c].name);
      }
    }

    if (meta.contains("mutual_information")) {
      const auto& mi = meta["mutual_information"];
      kb.set_mi_cache({mi.at("bins").get<std::size_t>(), mi.at("raw").get<std::vector<double>>()});
    }
    return kb;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptStore, meta_file.string() + ": " + e.what());
  }
}

}  // namespace regimerag

namespace regimerag {

std::vector<RegimeSample> scan_sample_tree(const fs::path& root, const VariableSchema& schema) {
  if (!fs::is_directory(root)) throw Error(ErrorCode::Io, root.string() + " is not a directory");
  std::vector<std::pair<HierarchicalPath, fs::path>> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".csv") continue;
    const fs::path rel = fs::relative(entry.path(), root);
    std::vector<std::string> segs;
    for (const auto& part : rel) segs.push_back(part.string());
    if (segs.size() != kPathDepth) continue;
    segs.back() = rel.stem().string();
    files.emplace_back(HierarchicalPath(std::move(segs)), entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<RegimeSample> out;
  out.reserve(files.size());
  for (const auto& [path, file] : files) out.push_back(read_sample_csv(file, schema, path));
  return out;
}

}  // namespace regimerag
