#pragma once

#include <compare>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "regimerag/matrix.hpp"

namespace regimerag {

inline constexpr std::size_t kDefaultRegimeLen = 18;
inline constexpr std::size_t kPathDepth = 4;  // group / device / regime / sample-id
inline constexpr int kStoreFormatVersion = 1;

/// Slash-separated hierarchical index of a regime sample, e.g.
/// `B777/B-2001/PRSOV-L/000042`. Also used as a scope prefix with fewer segments.
class HierarchicalPath {
 public:
  static constexpr char kSeparator = '/';

  HierarchicalPath() = default;
  explicit HierarchicalPath(std::vector<std::string> segments);

  /// Parses "a/b/c". The empty string yields the empty (root) prefix.
  static HierarchicalPath parse(std::string_view text);
  static bool valid_segment(std::string_view segment) noexcept;

  const std::vector<std::string>& segments() const noexcept { return segments_; }
  std::size_t depth() const noexcept { return segments_.size(); }
  bool empty() const noexcept { return segments_.empty(); }
  const std::string& str() const noexcept { return text_; }

  bool starts_with(const HierarchicalPath& prefix) const noexcept;
  /// The first `n` segments.
  HierarchicalPath prefix(std::size_t n) const;

  // Ordering is byte-wise on the joined text; retrieval tie-breaks rely on it.
  friend bool operator==(const HierarchicalPath& a, const HierarchicalPath& b) noexcept {
    return a.text_ == b.text_;
  }
  friend std::strong_ordering operator<=>(const HierarchicalPath& a,
                                          const HierarchicalPath& b) noexcept {
    return a.text_.compare(b.text_) <=> 0;
  }

 private:
  std::vector<std::string> segments_;
  std::string text_;
};

enum class VariableRole { Target, Covariate };

struct Variable {
  std::string name;
  VariableRole role = VariableRole::Covariate;
  std::string unit;

  friend bool operator==(const Variable&, const Variable&) = default;
};

/// Ordered channel description. Exactly one target; names unique.
class VariableSchema {
 public:
  VariableSchema() = default;
  explicit VariableSchema(std::vector<Variable> variables);

  /// MP (target, psi), IP (covariate, psi), N2 (covariate, %RPM).
  static VariableSchema prsov();

  std::size_t size() const noexcept { return variables_.size(); }
  const std::vector<Variable>& variables() const noexcept { return variables_; }
  const Variable& operator[](std::size_t i) const { return variables_[i]; }
  std::size_t target_index() const noexcept { return target_; }
  std::vector<std::size_t> covariate_indices() const;
  std::optional<std::size_t> index_of(std::string_view name) const;
  bool is_target(std::size_t column) const noexcept { return column == target_; }

  friend bool operator==(const VariableSchema& a, const VariableSchema& b) {
    return a.variables_ == b.variables_;
  }

 private:
  std::vector<Variable> variables_;
  std::size_t target_ = 0;
};

struct RegimeSample {
  HierarchicalPath path;
  Matrix values;                  // regime_len x V, raw units
  std::vector<double> timestamps;  // seconds, strictly increasing

  double start_time() const { return timestamps.front(); }
  double end_time() const { return timestamps.back(); }
};

/// Per-column population mean / standard deviation over every stored value.
struct ColumnStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  bool zero_variance(std::size_t c) const { return !(stddev[c] > 0.0); }
  /// Divisor used for z-scoring; 1 for zero-variance columns.
  double scale(std::size_t c) const { return zero_variance(c) ? 1.0 : stddev[c]; }
};

/// Raw MI scores cached alongside the store; `raw[target]` is unused (0).
struct MutualInformationCache {
  std::size_t bins = 0;
  std::vector<double> raw;
};

struct IngestOptions {
  // Keep the trailing regime_len rows of a longer recording instead of rejecting it.
  bool truncate_tail = false;
};

/// Lossless store of raw regimes. Statistics and the z-scored copy used for
/// retrieval are rebuilt from scratch whenever the sample set changes; stored
/// values are never modified. Read-only access is safe from many threads.
class KnowledgeBase {
 public:
  explicit KnowledgeBase(VariableSchema schema, std::size_t regime_len = kDefaultRegimeLen);

  void ingest(const HierarchicalPath& path, Matrix values, std::vector<double> timestamps,
              IngestOptions options = {});
  /// Validates every sample first; on any failure the KB is left unchanged.
  void ingest_batch(std::vector<RegimeSample> samples, IngestOptions options = {});

  const VariableSchema& schema() const noexcept { return schema_; }
  std::size_t regime_len() const noexcept { return regime_len_; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }

  const RegimeSample& sample(std::size_t i) const { return samples_[i]; }
  const std::vector<RegimeSample>& samples() const noexcept { return samples_; }
  const RegimeSample* find(const HierarchicalPath& path) const;

  const ColumnStats& stats() const noexcept { return stats_; }
  /// Sample `i` z-scored with stats(), row-major regime_len x V.
  std::span<const double> normalized(std::size_t i) const;

  const std::optional<MutualInformationCache>& mi_cache() const noexcept { return mi_cache_; }
  void set_mi_cache(MutualInformationCache cache);

 private:
  RegimeSample validate(RegimeSample sample, IngestOptions options) const;
  void refresh();

  VariableSchema schema_;
  std::size_t regime_len_;
  std::vector<RegimeSample> samples_;
  std::unordered_map<std::string, std::size_t> by_path_;
  ColumnStats stats_;
  std::vector<double> normalized_;
  std::optional<MutualInformationCache> mi_cache_;
};

/// Computes column statistics with a two-pass sum over the given samples.
ColumnStats compute_stats(std::span<const RegimeSample> samples, std::size_t columns);

/// z-scores `values` column-wise with `stats`.
Matrix normalize(const Matrix& values, const ColumnStats& stats);

/// Ordered subset of a knowledge base (ingestion order). Holds a pointer to
/// the KB, which must outlive it.
class KbView {
 public:
  KbView() = default;
  KbView(const KnowledgeBase& kb, std::vector<std::size_t> indices)
      : kb_(&kb), indices_(std::move(indices)) {}

  const KnowledgeBase& kb() const { return *kb_; }
  std::size_t size() const noexcept { return indices_.size(); }
  bool empty() const noexcept { return indices_.empty(); }
  std::size_t index(std::size_t i) const { return indices_[i]; }
  const std::vector<std::size_t>& indices() const noexcept { return indices_; }
  const RegimeSample& sample(std::size_t i) const { return kb_->sample(indices_[i]); }

  /// Drops every sample whose [start, end] time range intersects [start, end].
  KbView excluding_overlap(double start, double end) const;

 private:
  const KnowledgeBase* kb_ = nullptr;
  std::vector<std::size_t> indices_;
};

/// Samples whose path begins with `prefix`; the empty prefix selects all.
KbView filter_scope(const KnowledgeBase& kb, const HierarchicalPath& prefix);

// Persistence: <root>/kb.json plus one CSV per sample at
// <root>/<group>/<device>/<regime>/<sample-id>.csv.
inline constexpr std::string_view kMetadataFile = "kb.json";

void save_kb(const KnowledgeBase& kb, const std::filesystem::path& root);
KnowledgeBase load_kb(const std::filesystem::path& root);

/// Reads one sample CSV; the header must list `timestamp` then the schema
/// variables in order.
RegimeSample read_sample_csv(const std::filesystem::path& file, const VariableSchema& schema,
                             const HierarchicalPath& path);

/// Every `<g>/<d>/<r>/<id>.csv` below `root`, sorted by path.
std::vector<RegimeSample> scan_sample_tree(const std::filesystem::path& root,
                                           const VariableSchema& schema);

/// Decimal text for stored values: at most 9 significant digits.
std::string format_value(double v);
/// Shortest text that parses back to the identical double (timestamps).
std::string format_exact(double v);
/// Rounds to the value format_value() would persist.
double quantize_value(double v);

}  // namespace regimerag
