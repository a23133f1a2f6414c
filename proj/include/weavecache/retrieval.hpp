#pragma once

// Frame retrieval over a memory snapshot.
//
//   coarse_load  top frames by cosine(pooled frame key, pooled query key)
//   max_sim      sum over query tokens of the best inner product with any frame token
//   c2f_load     coarse_load to a candidate set, then rank candidates by max_sim
//   fine_oracle  max_sim against every frame; brute-force reference
//
// Ranking everywhere is score descending with the smaller frame_id first on
// ties. sim_ops counts elementary dot products: one per frame for the coarse
// pass, N_q * N_i per max_sim evaluation.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "weavecache/core_math.hpp"
#include "weavecache/errors.hpp"
#include "weavecache/memory.hpp"

namespace weavecache {

inline constexpr std::size_t kDefaultRecallFrames = 64;

/// Candidate-set size used when none is configured: four times the recall budget.
constexpr std::size_t default_coarse_candidates(std::size_t k) noexcept { return 4 * k; }

class QueryRecord {
 public:
  explicit QueryRecord(TokenMatrix token_keys)
      : token_keys_(std::move(token_keys)), pooled_key_(mean_pool(token_keys_)) {}

  const TokenMatrix& token_keys() const noexcept { return token_keys_; }
  const Embedding& pooled_key() const noexcept { return pooled_key_; }
  std::size_t dim() const noexcept { return token_keys_.dim(); }

 private:
  TokenMatrix token_keys_;
  Embedding pooled_key_;
};

enum class RetrievalStage { Coarse, Fine, CoarseToFine };

inline std::string_view to_string(RetrievalStage s) {
  switch (s) {
    case RetrievalStage::Coarse: return "coarse";
    case RetrievalStage::Fine: return "fine";
    case RetrievalStage::CoarseToFine: return "c2f";
  }
  return "unknown";
}

struct ScoredFrame {
  std::uint64_t frame_id;
  double score;

  bool operator==(const ScoredFrame&) const = default;
};

/// Strict ordering used for every top-k: higher score first, then earlier frame.
constexpr bool ranks_before(const ScoredFrame& a, const ScoredFrame& b) noexcept {
  if (a.score != b.score) return a.score > b.score;
  return a.frame_id < b.frame_id;
}

struct RetrievalResult {
  std::vector<ScoredFrame> entries;
  RetrievalStage stage = RetrievalStage::Fine;
  std::uint64_t sim_ops = 0;

  bool contains(std::uint64_t frame_id) const {
    return std::any_of(entries.begin(), entries.end(), [&](const ScoredFrame& e) { return e.frame_id == frame_id; });
  }
  std::vector<std::uint64_t> frame_ids() const {
    std::vector<std::uint64_t> ids;
    ids.reserve(entries.size());
    for (const auto& e : entries) ids.push_back(e.frame_id);
    return ids;
  }

  bool operator==(const RetrievalResult&) const = default;
};

namespace detail {

inline void keep_top(std::vector<ScoredFrame>& scored, std::size_t k) {
  if (k < scored.size()) {
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(), ranks_before);
    scored.resize(k);
  } else {
    std::sort(scored.begin(), scored.end(), ranks_before);
  }
}

inline void require_positive(std::size_t v, const char* name) {
  if (v == 0) throw InvalidParameterError(std::string(name) + " must be >= 1");
}

}  // namespace detail

/// Late-interaction score: sum_j max_k <query_j, frame_k>. Costs
/// query.rows() * frame.rows() dot products.
inline double max_sim(const TokenMatrix& frame_tokens, const TokenMatrix& query_tokens) {
  detail::require_same_dim(frame_tokens.dim(), query_tokens.dim());
  if (frame_tokens.empty() || query_tokens.empty()) throw EmptyInputError("max_sim needs at least one token on each side");
  double total = 0.0;
  for (std::size_t j = 0; j < query_tokens.rows(); ++j) {
    const auto qj = query_tokens.row(j);
    double best = dot(qj, frame_tokens.row(0));
    for (std::size_t k = 1; k < frame_tokens.rows(); ++k) best = std::max(best, dot(qj, frame_tokens.row(k)));
    total += best;
  }
  return total;
}

inline double max_sim(const FrameRecord& frame, const QueryRecord& q) { return max_sim(frame.token_keys, q.token_keys()); }

inline std::uint64_t max_sim_cost(const FrameRecord& frame, const QueryRecord& q) noexcept {
  return static_cast<std::uint64_t>(q.token_keys().rows()) * frame.token_keys.rows();
}

/// Top-min(m_coarse, n) frames by pooled-key cosine. sim_ops = n.
inline RetrievalResult coarse_load(const MemoryView& view, const QueryRecord& q, std::size_t m_coarse) {
  detail::require_positive(m_coarse, "m_coarse");
  const double q_norm = norm(q.pooled_key());
  if (q_norm == 0.0) throw ZeroNormError("query pooled key has zero norm");

  RetrievalResult out;
  out.stage = RetrievalStage::Coarse;
  out.entries.reserve(view.size());
  for (const FrameRecord& f : view) {
    detail::require_same_dim(f.pooled_key.dim(), q.dim());
    const double f_norm = norm(f.pooled_key);
    if (f_norm == 0.0) throw ZeroNormError("frame " + std::to_string(f.frame_id) + " pooled key has zero norm");
    out.entries.push_back({f.frame_id, dot(f.pooled_key, q.pooled_key()) / (f_norm * q_norm)});
  }
  out.sim_ops = view.size();
  detail::keep_top(out.entries, m_coarse);
  return out;
}

/// max_sim against every frame, fully sorted, cut to k. sim_ops = sum N_q * N_i.
inline RetrievalResult fine_oracle(const MemoryView& view, const QueryRecord& q, std::size_t k) {
  detail::require_positive(k, "k");
  RetrievalResult out;
  out.stage = RetrievalStage::Fine;
  out.entries.reserve(view.size());
  for (const FrameRecord& f : view) {
    out.entries.push_back({f.frame_id, max_sim(f, q)});
    out.sim_ops += max_sim_cost(f, q);
  }
  std::sort(out.entries.begin(), out.entries.end(), ranks_before);
  if (out.entries.size() > k) out.entries.resize(k);
  return out;
}

/// Coarse contraction to m_coarse candidates, then top-k of those by max_sim.
/// Coarse scores are discarded. sim_ops = n + sum over candidates of N_q * N_i.
inline RetrievalResult c2f_load(const MemoryView& view, const QueryRecord& q, std::size_t m_coarse, std::size_t k) {
  detail::require_positive(k, "k");
  RetrievalResult coarse = coarse_load(view, q, m_coarse);

  RetrievalResult out;
  out.stage = RetrievalStage::CoarseToFine;
  out.sim_ops = coarse.sim_ops;
  out.entries.reserve(coarse.entries.size());
  for (const auto& c : coarse.entries) {
    const FrameRecord& f = view[c.frame_id];
    out.entries.push_back({f.frame_id, max_sim(f, q)});
    out.sim_ops += max_sim_cost(f, q);
  }
  detail::keep_top(out.entries, k);
  return out;
}

}  // namespace weavecache
