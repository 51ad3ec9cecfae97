#include "regimerag/kb.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "regimerag/error.hpp"

namespace regimerag {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidPath: return "InvalidPath";
    case ErrorCode::DuplicatePath: return "DuplicatePath";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::NonMonotonicTimestamps: return "NonMonotonicTimestamps";
    case ErrorCode::InvalidSchema: return "InvalidSchema";
    case ErrorCode::CorruptStore: return "CorruptStore";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::Io: return "Io";
    case ErrorCode::InvalidDecay: return "InvalidDecay";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptyKB: return "EmptyKB";
    case ErrorCode::EmptyView: return "EmptyView";
    case ErrorCode::BackendUnavailable: return "BackendUnavailable";
    case ErrorCode::MalformedResponse: return "MalformedResponse";
    case ErrorCode::OutOfOrderRecord: return "OutOfOrderRecord";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

// ---------------------------------------------------------------------------
// HierarchicalPath

bool HierarchicalPath::valid_segment(std::string_view segment) noexcept {
  if (segment.empty() || segment == "." || segment == "..") return false;
  return std::all_of(segment.begin(), segment.end(), [](char ch) {
    return (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') ||
           ch == '-' || ch == '_' || ch == '.';
  });
}

HierarchicalPath::HierarchicalPath(std::vector<std::string> segments)
    : segments_(std::move(segments)) {
  for (const auto& s : segments_) {
    if (!valid_segment(s)) throw Error(ErrorCode::InvalidPath, "bad path segment '" + s + "'");
    if (!text_.empty()) text_.push_back(kSeparator);
    text_ += s;
  }
}

HierarchicalPath HierarchicalPath::parse(std::string_view text) {
  std::vector<std::string> parts;
  if (text.empty()) return HierarchicalPath{};
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(kSeparator, start);
    parts.emplace_back(text.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return HierarchicalPath(std::move(parts));
}

bool HierarchicalPath::starts_with(const HierarchicalPath& prefix) const noexcept {
  if (prefix.depth() > depth()) return false;
  return std::equal(prefix.segments_.begin(), prefix.segments_.end(), segments_.begin());
}

HierarchicalPath HierarchicalPath::prefix(std::size_t n) const {
  n = std::min(n, depth());
  return HierarchicalPath(std::vector<std::string>(segments_.begin(),
                                                   segments_.begin() + static_cast<std::ptrdiff_t>(n)));
}

// ---------------------------------------------------------------------------
// VariableSchema

VariableSchema::VariableSchema(std::vector<Variable> variables) : variables_(std::move(variables)) {
  std::unordered_set<std::string> names;
  std::size_t targets = 0;
  for (std::size_t i = 0; i < variables_.size(); ++i) {
    const auto& v = variables_[i];
    if (!HierarchicalPath::valid_segment(v.name)) {
      throw Error(ErrorCode::InvalidSchema, "bad variable name '" + v.name + "'");
    }
    if (v.name == "timestamp") throw Error(ErrorCode::InvalidSchema, "'timestamp' is reserved");
    if (!names.insert(v.name).second) {
      throw Error(ErrorCode::InvalidSchema, "duplicate variable name '" + v.name + "'");
    }
    if (v.role == VariableRole::Target) {
      ++targets;
      target_ = i;
    }
  }
  if (targets != 1) throw Error(ErrorCode::InvalidSchema, "schema needs exactly one target variable");
}

VariableSchema VariableSchema::prsov() {
  return VariableSchema({{"MP", VariableRole::Target, "psi"},
                         {"IP", VariableRole::Covariate, "psi"},
                         {"N2", VariableRole::Covariate, "%RPM"}});
}

std::vector<std::size_t> VariableSchema::covariate_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < variables_.size(); ++i) {
    if (i != target_) out.push_back(i);
  }
  return out;
}

std::optional<std::size_t> VariableSchema::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < variables_.size(); ++i) {
    if (variables_[i].name == name) return i;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Statistics

ColumnStats compute_stats(std::span<const RegimeSample> samples, std::size_t columns) {
  ColumnStats stats;
  stats.mean.assign(columns, 0.0);
  stats.stddev.assign(columns, 0.0);
  if (samples.empty()) return stats;

  std::size_t count = 0;
  for (const auto& s : samples) {
    for (std::size_t r = 0; r < s.values.rows(); ++r) {
      for (std::size_t c = 0; c < columns; ++c) stats.mean[c] += s.values(r, c);
    }
    count += s.values.rows();
  }
  for (auto& m : stats.mean) m /= static_cast<double>(count);

  for (const auto& s : samples) {
    for (std::size_t r = 0; r < s.values.rows(); ++r) {
      for (std::size_t c = 0; c < columns; ++c) {
        const double d = s.values(r, c) - stats.mean[c];
        stats.stddev[c] += d * d;
      }
    }
  }
  for (auto& v : stats.stddev) v = std::sqrt(v / static_cast<double>(count));
  return stats;
}

Matrix normalize(const Matrix& values, const ColumnStats& stats) {
  if (values.cols() != stats.mean.size()) {
    throw Error(ErrorCode::DimensionMismatch, "statistics do not match matrix width");
  }
  Matrix out(values.rows(), values.cols());
  for (std::size_t r = 0; r < values.rows(); ++r) {
    for (std::size_t c = 0; c < values.cols(); ++c) {
      out(r, c) = (values(r, c) - stats.mean[c]) / stats.scale(c);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// KnowledgeBase

KnowledgeBase::KnowledgeBase(VariableSchema schema, std::size_t regime_len)
    : schema_(std::move(schema)), regime_len_(regime_len) {
  if (schema_.size() == 0) throw Error(ErrorCode::InvalidSchema, "empty schema");
  if (regime_len_ == 0) throw Error(ErrorCode::InvalidArgument, "regime length must be positive");
  stats_ = compute_stats({}, schema_.size());
}

RegimeSample KnowledgeBase::validate(RegimeSample sample, IngestOptions options) const {
  if (sample.path.depth() != kPathDepth) {
    throw Error(ErrorCode::InvalidPath, "sample path '" + sample.path.str() + "' must have " +
                                            std::to_string(kPathDepth) + " segments");
  }
  auto& values = sample.values;
  if (values.cols() != schema_.size()) {
    throw Error(ErrorCode::ShapeMismatch, sample.path.str() + ": expected " +
                                              std::to_string(schema_.size()) + " variables, got " +
                                              std::to_string(values.cols()));
  }
  if (sample.timestamps.size() != values.rows()) {
    throw Error(ErrorCode::ShapeMismatch, sample.path.str() + ": timestamp count differs from rows");
  }
  if (values.rows() != regime_len_) {
    if (options.truncate_tail && values.rows() > regime_len_) {
      const std::size_t drop = values.rows() - regime_len_;
      values = values.slice_rows(drop, regime_len_);
      sample.timestamps.erase(sample.timestamps.begin(),
                              sample.timestamps.begin() + static_cast<std::ptrdiff_t>(drop));
    } else {
      throw Error(ErrorCode::ShapeMismatch, sample.path.str() + ": expected " +
                                                std::to_string(regime_len_) + " rows, got " +
                                                std::to_string(values.rows()));
    }
  }
  for (double v : values.flat()) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, sample.path.str());
  }
  for (std::size_t i = 0; i < sample.timestamps.size(); ++i) {
    if (!std::isfinite(sample.timestamps[i])) {
      throw Error(ErrorCode::NonFiniteValue, sample.path.str() + ": timestamp");
    }
    if (i > 0 && !(sample.timestamps[i] > sample.timestamps[i - 1])) {
      throw Error(ErrorCode::NonMonotonicTimestamps, sample.path.str());
    }
  }
  return sample;
}

void KnowledgeBase::ingest(const HierarchicalPath& path, Matrix values,
                           std::vector<double> timestamps, IngestOptions options) {
  std::vector<RegimeSample> one;
  one.push_back(RegimeSample{path, std::move(values), std::move(timestamps)});
  ingest_batch(std::move(one), options);
}

void KnowledgeBase::ingest_batch(std::vector<RegimeSample> samples, IngestOptions options) {
  std::unordered_set<std::string> batch_paths;
  for (auto& s : samples) {
    s = validate(std::move(s), options);
    if (by_path_.contains(s.path.str()) || !batch_paths.insert(s.path.str()).second) {
      throw Error(ErrorCode::DuplicatePath, s.path.str());
    }
  }
  samples_.reserve(samples_.size() + samples.size());
  for (auto& s : samples) {
    by_path_.emplace(s.path.str(), samples_.size());
    samples_.push_back(std::move(s));
  }
  mi_cache_.reset();
  refresh();
}

void KnowledgeBase::refresh() {
  stats_ = compute_stats(samples_, schema_.size());
  for (std::size_t c = 0; c < schema_.size(); ++c) {
    if (samples_.size() >= 2 && stats_.zero_variance(c)) {
      spdlog::warn("variable '{}' has zero variance across the knowledge base", schema_[c].name);
    }
  }
  const std::size_t cells = regime_len_ * schema_.size();
  normalized_.resize(samples_.size() * cells);
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const auto& m = samples_[i].values;
    double* out = normalized_.data() + i * cells;
    for (std::size_t r = 0; r < regime_len_; ++r) {
      for (std::size_t c = 0; c < schema_.size(); ++c) {
        out[r * schema_.size() + c] = (m(r, c) - stats_.mean[c]) / stats_.scale(c);
      }
    }
  }
}

const RegimeSample* KnowledgeBase::find(const HierarchicalPath& path) const {
  auto it = by_path_.find(path.str());
  return it == by_path_.end() ? nullptr : &samples_[it->second];
}

std::span<const double> KnowledgeBase::normalized(std::size_t i) const {
  const std::size_t cells = regime_len_ * schema_.size();
  return {normalized_.data() + i * cells, cells};
}

void KnowledgeBase::set_mi_cache(MutualInformationCache cache) {
  if (cache.raw.size() != schema_.size()) {
    throw Error(ErrorCode::DimensionMismatch, "MI cache width differs from schema");
  }
  mi_cache_ = std::move(cache);
}

// ---------------------------------------------------------------------------
// Views

KbView filter_scope(const KnowledgeBase& kb, const HierarchicalPath& prefix) {
  std::vector<std::size_t> indices;
  if (prefix.empty()) {
    indices.resize(kb.size());
    for (std::size_t i = 0; i < kb.size(); ++i) indices[i] = i;
  } else {
    for (std::size_t i = 0; i < kb.size(); ++i) {
      if (kb.sample(i).path.starts_with(prefix)) indices.push_back(i);
    }
  }
  return KbView(kb, std::move(indices));
}

KbView KbView::excluding_overlap(double start, double end) const {
  std::vector<std::size_t> kept;
  kept.reserve(indices_.size());
  for (std::size_t idx : indices_) {
    const auto& s = kb_->sample(idx);
    if (s.end_time() < start || s.start_time() > end) kept.push_back(idx);
  }
  return KbView(*kb_, std::move(kept));
}

}  // namespace regimerag
