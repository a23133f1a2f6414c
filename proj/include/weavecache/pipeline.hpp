#pragma once

// Uncertainty-gated answering: answer from the local window, measure the
// entropy of that answer, and only when it is at or above the threshold
// recall frames by coarse-to-fine retrieval and answer again.

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "weavecache/core_math.hpp"
#include "weavecache/errors.hpp"
#include "weavecache/gate.hpp"
#include "weavecache/memory.hpp"
#include "weavecache/retrieval.hpp"

namespace weavecache {

/// Scores answer options given an ordered context. Implementations must
/// return a Distribution of length options.size() and be deterministic.
class Answerer {
 public:
  virtual ~Answerer() = default;
  virtual Distribution score(const FrameRefs& context, const QueryRecord& q,
                             std::span<const Embedding> options) const = 0;
};

/// Default answerer temperature. Cosine logits live in [-1, 1], so this sets
/// how sharply a present option dominates an absent one.
inline constexpr double kDefaultTau = 0.1;

/// Stand-in for a video LLM: logit_a = max over context frames of
/// cosine(pooled frame key, option a), then softmax(logits / tau).
class MockAnswerer final : public Answerer {
 public:
  explicit MockAnswerer(double tau) : tau_(tau) {
    if (!(tau_ > 0.0) || !std::isfinite(tau_)) throw InvalidParameterError("answerer temperature must be finite and > 0");
  }

  double tau() const noexcept { return tau_; }

  Distribution score(const FrameRefs& context, const QueryRecord& /*q*/,
                     std::span<const Embedding> options) const override {
    if (options.empty()) throw EmptyInputError("no answer options");
    if (context.empty()) throw EmptyInputError("answerer context is empty");
    std::vector<double> option_norms;
    option_norms.reserve(options.size());
    for (std::size_t a = 0; a < options.size(); ++a) {
      option_norms.push_back(norm(options[a]));
      if (option_norms.back() == 0.0) throw ZeroNormError("answer option " + std::to_string(a) + " has zero norm");
    }
    std::vector<double> logits(options.size(), -std::numeric_limits<double>::infinity());
    for (const FrameRecord* f : context) {
      const double f_norm = norm(f->pooled_key);
      if (f_norm == 0.0) throw ZeroNormError("frame " + std::to_string(f->frame_id) + " pooled key has zero norm");
      for (std::size_t a = 0; a < options.size(); ++a) {
        logits[a] = std::max(logits[a], dot(f->pooled_key, options[a]) / (f_norm * option_norms[a]));
      }
    }
    return softmax(logits, tau_);
  }

 private:
  double tau_;
};

inline MockAnswerer mock_answerer(double tau) { return MockAnswerer(tau); }

struct AnswerConfig {
  double delta = kDefaultDeltaNats;
  std::size_t k = kDefaultRecallFrames;
  std::size_t m_coarse = 0;  // 0 selects default_coarse_candidates(k)

  std::size_t coarse_candidates() const noexcept { return m_coarse ? m_coarse : default_coarse_candidates(k); }
};

struct AnswerTrace {
  std::uint64_t visible_frames = 0;  // memory size when the query was answered
  Distribution local_dist{1.0};
  GateDecision gate{};
  std::optional<RetrievalResult> retrieved;
  Distribution final_dist{1.0};
  std::size_t chosen_option = 0;
  std::uint64_t sim_ops_total = 0;
  double wall_ms = 0.0;
  std::vector<std::uint64_t> local_frame_ids;
  std::vector<std::uint64_t> context_frame_ids;  // context of the final answer, chronological
};

/// Equality of everything except wall-clock time.
inline bool same_outcome(const AnswerTrace& a, const AnswerTrace& b) {
  return a.visible_frames == b.visible_frames && a.local_dist == b.local_dist && a.gate.branch == b.gate.branch &&
         a.gate.entropy_nats == b.gate.entropy_nats && a.retrieved == b.retrieved && a.final_dist == b.final_dist &&
         a.chosen_option == b.chosen_option && a.sim_ops_total == b.sim_ops_total &&
         a.local_frame_ids == b.local_frame_ids && a.context_frame_ids == b.context_frame_ids;
}

namespace detail {

inline std::vector<std::uint64_t> ids_of(const FrameRefs& frames) {
  std::vector<std::uint64_t> ids;
  ids.reserve(frames.size());
  for (const auto* f : frames) ids.push_back(f->frame_id);
  return ids;
}

}  // namespace detail

/// Gated answer over a snapshot. window_c is the local window length C.
inline AnswerTrace answer_query(const MemoryView& view, std::size_t window_c, const QueryRecord& q,
                                std::span<const Embedding> options, const AnswerConfig& cfg, const Answerer& ans) {
  const auto started = std::chrono::steady_clock::now();
  if (view.empty()) throw EmptyMemoryError("cannot answer over an empty memory");
  if (options.empty()) throw EmptyInputError("no answer options");

  AnswerTrace trace;
  trace.visible_frames = view.size();

  const FrameRefs local = view.tail(window_c);
  trace.local_frame_ids = detail::ids_of(local);
  trace.local_dist = ans.score(local, q, options);
  if (trace.local_dist.size() != options.size()) throw ShapeError("answerer returned a distribution of the wrong length");
  trace.gate = decide(trace.local_dist, cfg.delta);

  if (trace.gate.branch == GateBranch::LocalAnswer) {
    trace.final_dist = trace.local_dist;
    trace.context_frame_ids = trace.local_frame_ids;
  } else {
    trace.retrieved = c2f_load(view, q, cfg.coarse_candidates(), cfg.k);
    trace.sim_ops_total = trace.retrieved->sim_ops;

    std::vector<std::uint64_t> ids = trace.retrieved->frame_ids();
    ids.insert(ids.end(), trace.local_frame_ids.begin(), trace.local_frame_ids.end());
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

    FrameRefs context;
    context.reserve(ids.size());
    for (auto id : ids) context.push_back(&view[id]);
    trace.context_frame_ids = std::move(ids);
    trace.final_dist = ans.score(context, q, options);
    if (trace.final_dist.size() != options.size()) throw ShapeError("answerer returned a distribution of the wrong length");
  }
  trace.chosen_option = argmax(trace.final_dist);
  trace.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  return trace;
}

inline AnswerTrace answer_query(const MemoryBuffer& memory, const QueryRecord& q, std::span<const Embedding> options,
                                const AnswerConfig& cfg, const Answerer& ans) {
  return answer_query(memory.snapshot(), memory.window_c(), q, options, cfg, ans);
}

// Trace export. Schema version 1.

inline nlohmann::json trace_json(const AnswerTrace& t) {
  auto probs = [](const Distribution& d) { return std::vector<double>(d.probs().begin(), d.probs().end()); };
  nlohmann::json j{
      {"v", 1},
      {"visible_frames", t.visible_frames},
      {"local_dist", probs(t.local_dist)},
      {"gate",
       {{"entropy_nats", t.gate.entropy_nats},
        {"threshold_nats", std::isinf(t.gate.threshold_nats) ? nlohmann::json("inf") : nlohmann::json(t.gate.threshold_nats)},
        {"branch", std::string(to_string(t.gate.branch))}}},
      {"final_dist", probs(t.final_dist)},
      {"chosen_option", t.chosen_option},
      {"sim_ops_total", t.sim_ops_total},
      {"wall_ms", t.wall_ms},
      {"local_frame_ids", t.local_frame_ids},
      {"context_frame_ids", t.context_frame_ids},
  };
  if (t.retrieved) {
    auto entries = nlohmann::json::array();
    for (const auto& e : t.retrieved->entries) entries.push_back({{"frame_id", e.frame_id}, {"score", e.score}});
    j["retrieved"] = {{"stage", std::string(to_string(t.retrieved->stage))},
                      {"sim_ops", t.retrieved->sim_ops},
                      {"entries", std::move(entries)}};
  } else {
    j["retrieved"] = nullptr;
  }
  return j;
}

}  // namespace weavecache
