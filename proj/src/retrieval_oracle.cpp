#include <algorithm>
#include <cmath>

#include "regimerag/error.hpp"
#include "regimerag/retrieval.hpp"

namespace regimerag {

// Deliberately naive: no shared kernels, no precomputed normalized cache,
// full sort of the whole view.
RetrievalResult retrieve_exhaustive_oracle(const Query& query, const KbView& view,
                                           const FusedWeights& weights, std::size_t k) {
  if (view.empty()) throw Error(ErrorCode::EmptyView, "no candidates in scope");
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be at least 1");
  const Matrix& w = weights.matrix;
  const Matrix& q = query.normalized;
  const ColumnStats& stats = view.kb().stats();

  struct Scored {
    std::size_t kb_index;
    double cosine;
    double distance;
  };
  std::vector<Scored> scored;
  for (std::size_t i = 0; i < view.size(); ++i) {
    const RegimeSample& s = view.sample(i);
    if (!s.values.same_shape(w)) throw Error(ErrorCode::ShapeMismatch, s.path.str());
    double dot = 0.0, qq = 0.0, cc = 0.0, sq = 0.0;
    for (std::size_t t = 0; t < w.rows(); ++t) {
      for (std::size_t v = 0; v < w.cols(); ++v) {
        if (w(t, v) == 0.0) continue;
        const double c = (s.values(t, v) - stats.mean[v]) / stats.scale(v);
        dot += w(t, v) * q(t, v) * c;
        qq += w(t, v) * q(t, v) * q(t, v);
        cc += w(t, v) * c * c;
        sq += w(t, v) * (q(t, v) - c) * (q(t, v) - c);
      }
    }
    const double cosine = (qq == 0.0 || cc == 0.0) ? 0.0 : dot / (std::sqrt(qq) * std::sqrt(cc));
    scored.push_back({view.index(i), cosine, std::sqrt(sq)});
  }

  const KnowledgeBase& kb = view.kb();
  std::sort(scored.begin(), scored.end(), [&](const Scored& a, const Scored& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return kb.sample(a.kb_index).path < kb.sample(b.kb_index).path;
  });

  RetrievalResult result;
  result.stage1_count = scored.size();
  result.k_exceeded_view = k > scored.size();
  const std::size_t keep = std::min(k, scored.size());
  for (std::size_t r = 0; r < keep; ++r) {
    result.entries.push_back({kb.sample(scored[r].kb_index).path, scored[r].kb_index,
                              scored[r].cosine, scored[r].distance, r + 1});
  }
  return result;
}

}  // namespace regimerag
