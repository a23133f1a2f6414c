#pragma once

// Shared fixtures for the test binaries: random instances and retrieval
// wrappers that check the reported sim_ops against the closed-form cost on
// every call.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "weavecache/core_math.hpp"
#include "weavecache/memory.hpp"
#include "weavecache/random.hpp"
#include "weavecache/retrieval.hpp"

namespace weavecache::testing {

inline TokenMatrix random_tokens(Rng& rng, std::size_t rows, std::size_t dim) {
  TokenMatrix m(dim);
  std::vector<double> row(dim);
  for (std::size_t r = 0; r < rows; ++r) {
    for (double& x : row) x = rng.normal();
    m.push_back(row);
  }
  return m;
}

inline std::vector<double> random_vector(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  for (double& x : v) x = rng.normal();
  return v;
}

struct Instance {
  std::unique_ptr<MemoryBuffer> memory;
  QueryRecord query;
};

/// n frames with 1..max_tokens tokens each, a query with 1..max_query_tokens tokens.
inline Instance random_instance(Rng& rng, std::size_t n, std::size_t dim, std::size_t max_tokens,
                                std::size_t max_query_tokens) {
  auto memory = std::make_unique<MemoryBuffer>(dim);
  for (std::size_t i = 0; i < n; ++i) {
    memory->append(static_cast<double>(i), random_tokens(rng, 1 + rng.below(max_tokens), dim));
  }
  return {std::move(memory), QueryRecord(random_tokens(rng, 1 + rng.below(max_query_tokens), dim))};
}

// Closed-form costs.
inline std::uint64_t coarse_cost(const MemoryView& view) { return view.size(); }

inline std::uint64_t fine_cost(const MemoryView& view, const QueryRecord& q) {
  std::uint64_t ops = 0;
  for (const auto& f : view) ops += q.token_keys().rows() * f.token_keys.rows();
  return ops;
}

inline std::uint64_t c2f_cost(const MemoryView& view, const QueryRecord& q, std::size_t m_coarse) {
  // The candidate set is recomputed independently from cosine scores.
  std::vector<ScoredFrame> scored;
  for (const auto& f : view) scored.push_back({f.frame_id, cosine(f.pooled_key, q.pooled_key())});
  std::sort(scored.begin(), scored.end(), ranks_before);
  if (scored.size() > m_coarse) scored.resize(m_coarse);
  std::uint64_t ops = view.size();
  for (const auto& s : scored) ops += q.token_keys().rows() * view[s.frame_id].token_keys.rows();
  return ops;
}

inline void require_cost(std::uint64_t got, std::uint64_t want, const char* what) {
  if (got != want) {
    throw std::logic_error(std::string(what) + " sim_ops " + std::to_string(got) + " != closed form " +
                           std::to_string(want));
  }
}

inline RetrievalResult checked_coarse(const MemoryView& view, const QueryRecord& q, std::size_t m_coarse) {
  auto r = coarse_load(view, q, m_coarse);
  require_cost(r.sim_ops, coarse_cost(view), "coarse_load");
  return r;
}

inline RetrievalResult checked_fine(const MemoryView& view, const QueryRecord& q, std::size_t k) {
  auto r = fine_oracle(view, q, k);
  require_cost(r.sim_ops, fine_cost(view, q), "fine_oracle");
  return r;
}

inline RetrievalResult checked_c2f(const MemoryView& view, const QueryRecord& q, std::size_t m_coarse, std::size_t k) {
  auto r = c2f_load(view, q, m_coarse, k);
  require_cost(r.sim_ops, c2f_cost(view, q, m_coarse), "c2f_load");
  return r;
}

}  // namespace weavecache::testing
