#pragma once

#include <cmath>
#include <limits>
#include <string_view>

#include "weavecache/core_math.hpp"
#include "weavecache/errors.hpp"

namespace weavecache {

/// Entropy threshold, in nats, above which the local answer is not trusted.
inline constexpr double kDefaultDeltaNats = 0.6;

/// Threshold sentinel that never triggers recall.
inline constexpr double kNeverRecall = std::numeric_limits<double>::infinity();

enum class GateBranch { LocalAnswer, Recall };

inline std::string_view to_string(GateBranch b) { return b == GateBranch::Recall ? "recall" : "local"; }

struct GateDecision {
  double entropy_nats;
  double threshold_nats;
  GateBranch branch;

  bool operator==(const GateDecision&) const = default;
};

/// Answer locally only while entropy < delta; the boundary recalls.
inline GateDecision decide(const Distribution& local_dist, double delta) {
  if (std::isnan(delta) || delta < 0.0) throw InvalidParameterError("gate threshold must be >= 0");
  const double h = entropy(local_dist);
  return {h, delta, h >= delta ? GateBranch::Recall : GateBranch::LocalAnswer};
}

}  // namespace weavecache
