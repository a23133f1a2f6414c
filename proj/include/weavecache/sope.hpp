#pragma once

// Temporal-reconstruction data transform.
//
// A clip is cut into segments (g consecutive frames each). Every slot keeps
// its chronological timestamp while the segment contents are permuted; the
// training target asks for each slot's true time range. score_reorder grades
// a predicted list of ranges against that target.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "weavecache/errors.hpp"
#include "weavecache/memory.hpp"
#include "weavecache/random.hpp"

namespace weavecache {

inline constexpr const char* kReorderInstruction =
    "These video segments are shuffled. List each segment's true time range.";

struct TimeRange {
  double start_s;
  double end_s;

  bool operator==(const TimeRange&) const = default;
};

// ---------------------------------------------------------------------------
// Segments

/// Per-frame ranges [t_i, t_{i+1}); the last frame closes at stream_end_s.
/// Without an explicit end the last range repeats the final inter-frame gap
/// (one second for a single frame).
inline std::vector<TimeRange> frame_time_ranges(std::span<const double> timestamps,
                                                std::optional<double> stream_end_s = std::nullopt) {
  if (timestamps.empty()) throw EmptyInputError("no frames");
  std::vector<TimeRange> out;
  out.reserve(timestamps.size());
  for (std::size_t i = 0; i + 1 < timestamps.size(); ++i) {
    if (timestamps[i + 1] < timestamps[i]) throw TimeOrderError("frame timestamps are not chronological");
    out.push_back({timestamps[i], timestamps[i + 1]});
  }
  const double last = timestamps.back();
  double end = last + 1.0;
  if (stream_end_s) {
    end = *stream_end_s;
  } else if (timestamps.size() > 1) {
    end = last + (last - timestamps[timestamps.size() - 2]);
  }
  if (end < last) throw TimeOrderError("stream end precedes the last frame");
  out.push_back({last, end});
  return out;
}

inline std::vector<TimeRange> frame_time_ranges(const FrameRefs& frames, std::optional<double> stream_end_s = std::nullopt) {
  std::vector<double> ts;
  ts.reserve(frames.size());
  for (const auto* f : frames) ts.push_back(f->timestamp_s);
  return frame_time_ranges(ts, stream_end_s);
}

/// Merges consecutive ranges into segments of `group` frames; the final
/// segment may be shorter.
inline std::vector<TimeRange> group_ranges(const std::vector<TimeRange>& frames, std::size_t group) {
  if (group == 0) throw InvalidParameterError("group size must be >= 1");
  std::vector<TimeRange> out;
  for (std::size_t i = 0; i < frames.size(); i += group) {
    const std::size_t last = std::min(i + group, frames.size()) - 1;
    out.push_back({frames[i].start_s, frames[last].end_s});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Interleaving and shuffling

struct LayoutSlot {
  enum class Kind { Timestamp, Content };
  Kind kind;
  std::size_t frame_index;
  double timestamp_s;

  bool operator==(const LayoutSlot&) const = default;
};

/// Unshuffled layout [ts_0, content_0, ts_1, content_1, ...].
inline std::vector<LayoutSlot> interleave(const FrameRefs& frames) {
  if (frames.empty()) throw EmptyInputError("interleave needs at least one frame");
  std::vector<LayoutSlot> out;
  out.reserve(2 * frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (i > 0 && frames[i]->timestamp_s < frames[i - 1]->timestamp_s) {
      throw TimeOrderError("interleave input is not chronological at position " + std::to_string(i));
    }
    out.push_back({LayoutSlot::Kind::Timestamp, i, frames[i]->timestamp_s});
    out.push_back({LayoutSlot::Kind::Content, i, frames[i]->timestamp_s});
  }
  return out;
}

struct SegmentSlot {
  std::size_t slot_index;
  double slot_timestamp_s;
  std::size_t content_segment;  // index into original_ranges

  bool operator==(const SegmentSlot&) const = default;
};

struct SegmentSequence {
  std::vector<SegmentSlot> slots;
  std::vector<TimeRange> original_ranges;  // chronological, one per segment

  std::size_t size() const noexcept { return slots.size(); }
};

struct ShuffledSegments {
  SegmentSequence sequence;
  std::vector<std::size_t> permutation;  // slot i shows segment permutation[i]
};

/// Slot i keeps segment i's start time and shows segment permutation[i].
inline ShuffledSegments arrange_segments(const std::vector<TimeRange>& segments, std::vector<std::size_t> permutation) {
  if (segments.empty()) throw EmptyInputError("shuffle needs at least one segment");
  if (permutation.size() != segments.size()) throw ShapeError("permutation length does not match segment count");
  for (std::size_t i = 1; i < segments.size(); ++i) {
    if (!(segments[i].start_s > segments[i - 1].start_s)) {
      throw TimeOrderError("segment start times must be strictly increasing (segment " + std::to_string(i) + ")");
    }
  }
  std::vector<bool> seen(segments.size(), false);
  for (std::size_t p : permutation) {
    if (p >= segments.size() || seen[p]) throw ShapeError("not a permutation");
    seen[p] = true;
  }
  ShuffledSegments out;
  out.permutation = std::move(permutation);
  out.sequence.original_ranges = segments;
  out.sequence.slots.reserve(segments.size());
  for (std::size_t i = 0; i < segments.size(); ++i) {
    out.sequence.slots.push_back({i, segments[i].start_s, out.permutation[i]});
  }
  return out;
}

/// Keeps slot timestamps chronological and permutes contents by a uniformly
/// drawn permutation (identity allowed).
inline ShuffledSegments shuffle_with_timestamps(const std::vector<TimeRange>& segments, std::uint64_t seed) {
  if (segments.empty()) throw EmptyInputError("shuffle needs at least one segment");
  Rng rng(seed);
  return arrange_segments(segments, rng.permutation(segments.size()));
}

inline ShuffledSegments shuffle_with_timestamps(const FrameRefs& frames, std::uint64_t seed, std::size_t group = 1) {
  return shuffle_with_timestamps(group_ranges(frame_time_ranges(frames), group), seed);
}

/// Slot i receives items[permutation[i]].
template <class T>
std::vector<T> apply_shuffle(const std::vector<T>& items, const std::vector<std::size_t>& permutation) {
  if (items.size() != permutation.size()) throw ShapeError("permutation length does not match item count");
  std::vector<T> out;
  out.reserve(items.size());
  for (std::size_t p : permutation) out.push_back(items.at(p));
  return out;
}

/// Inverse of apply_shuffle: position permutation[i] receives shuffled[i].
template <class T>
std::vector<T> unshuffle(const std::vector<T>& shuffled, const std::vector<std::size_t>& permutation) {
  if (shuffled.size() != permutation.size()) throw ShapeError("permutation length does not match item count");
  std::vector<std::optional<T>> slots(shuffled.size());
  for (std::size_t i = 0; i < shuffled.size(); ++i) slots.at(permutation[i]).emplace(shuffled[i]);
  std::vector<T> out;
  out.reserve(shuffled.size());
  for (auto& s : slots) {
    if (!s) throw ShapeError("not a permutation");
    out.push_back(std::move(*s));
  }
  return out;
}

/// Content segment at each chronological position, recovered from the slots.
inline std::vector<std::size_t> unshuffle(const ShuffledSegments& shuffled) {
  std::vector<std::size_t> contents;
  contents.reserve(shuffled.sequence.size());
  for (const auto& s : shuffled.sequence.slots) contents.push_back(s.content_segment);
  return unshuffle(contents, shuffled.permutation);
}

// ---------------------------------------------------------------------------
// Prompt and target

struct ReorderTarget {
  std::vector<TimeRange> true_time_of_slot;

  std::size_t size() const noexcept { return true_time_of_slot.size(); }
  bool operator==(const ReorderTarget&) const = default;
};

struct ReorderPrompt {
  std::string text;
  ReorderTarget target;
};

inline std::string format_seconds(double s) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(3);
  os << s;
  return os.str();
}

inline ReorderPrompt build_reorder_prompt(const SegmentSequence& seq) {
  ReorderPrompt out;
  std::ostringstream text;
  text << kReorderInstruction << '\n';
  for (const auto& slot : seq.slots) {
    text << "Segment " << (slot.slot_index + 1) << " <t=" << format_seconds(slot.slot_timestamp_s) << "s> <video>\n";
    out.target.true_time_of_slot.push_back(seq.original_ranges.at(slot.content_segment));
  }
  out.text = text.str();
  return out;
}

/// The ordering sub-question goes before the original QA text.
inline std::string with_question(const ReorderPrompt& prompt, const std::string& qa_text) {
  return prompt.text + qa_text;
}

// ---------------------------------------------------------------------------
// Scoring

struct OverlapScore {
  double exact_match_fraction;
  double kendall_tau;
};

namespace detail {

inline std::pair<long long, long long> canonical_range(const TimeRange& r) {
  return {std::llround(r.start_s * 1000.0), std::llround(r.end_s * 1000.0)};
}

inline int compare_ranges(const TimeRange& a, const TimeRange& b) {
  const auto ca = canonical_range(a);
  const auto cb = canonical_range(b);
  return ca < cb ? -1 : (cb < ca ? 1 : 0);
}

}  // namespace detail

/// Exact-match fraction plus Kendall tau-b between the slot orderings induced
/// by the predicted and true ranges. Ranges are compared after rounding to
/// milliseconds.
inline OverlapScore score_reorder(const std::vector<TimeRange>& predicted, const ReorderTarget& truth) {
  const std::size_t n = truth.size();
  if (predicted.size() != n) {
    throw ShapeError("prediction has " + std::to_string(predicted.size()) + " ranges, target has " + std::to_string(n));
  }
  if (n == 0) throw ShapeError("empty reorder target");

  std::size_t exact = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (detail::compare_ranges(predicted[i], truth.true_time_of_slot[i]) == 0) ++exact;
  }

  long long concordant = 0, discordant = 0, pred_ties = 0, true_ties = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const int p = detail::compare_ranges(predicted[i], predicted[j]);
      const int t = detail::compare_ranges(truth.true_time_of_slot[i], truth.true_time_of_slot[j]);
      if (p == 0) ++pred_ties;
      if (t == 0) ++true_ties;
      if (p != 0 && t != 0) (p == t ? concordant : discordant) += 1;
    }
  }
  const double pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  const double denom = std::sqrt((pairs - static_cast<double>(pred_ties)) * (pairs - static_cast<double>(true_ties)));
  double tau = 0.0;
  if (n == 1) {
    tau = 1.0;
  } else if (denom > 0.0) {
    tau = static_cast<double>(concordant - discordant) / denom;
  }
  return {static_cast<double>(exact) / static_cast<double>(n), tau};
}

/// Counts of exact_match_fraction values rounded to the nearest tenth
/// (bucket b holds values that round to b / 10).
struct ReorderHistogram {
  std::array<std::size_t, 11> buckets{};
  std::size_t count = 0;
  double sum_exact = 0.0;
  double sum_tau = 0.0;

  void add(const OverlapScore& s) {
    const auto b = static_cast<std::size_t>(std::llround(s.exact_match_fraction * 10.0));
    ++buckets.at(std::min<std::size_t>(b, 10));
    ++count;
    sum_exact += s.exact_match_fraction;
    sum_tau += s.kendall_tau;
  }
  double mean_exact() const { return count ? sum_exact / static_cast<double>(count) : 0.0; }
  double mean_tau() const { return count ? sum_tau / static_cast<double>(count) : 0.0; }
};

// ---------------------------------------------------------------------------
// JSON Lines export
//   {"slots": [{"slot_ts": s, "content_frame": i}], "prompt": "...",
//    "target_ranges": [[a, b], ...], "pi": [...]}
// content_frame is the content segment index (a frame index when group = 1).

inline nlohmann::json ranges_json(const std::vector<TimeRange>& ranges) {
  auto out = nlohmann::json::array();
  for (const auto& r : ranges) out.push_back({r.start_s, r.end_s});
  return out;
}

inline std::vector<TimeRange> parse_ranges(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array()) throw ParseError(where + ": ranges must be an array");
  std::vector<TimeRange> out;
  for (const auto& r : j) {
    if (!r.is_array() || r.size() != 2 || !r[0].is_number() || !r[1].is_number()) {
      throw ParseError(where + ": each range must be [start, end]");
    }
    out.push_back({r[0].get<double>(), r[1].get<double>()});
  }
  return out;
}

inline nlohmann::json sope_example_json(const ShuffledSegments& shuffled, const ReorderPrompt& prompt) {
  auto slots = nlohmann::json::array();
  for (const auto& s : shuffled.sequence.slots) {
    slots.push_back({{"slot_ts", s.slot_timestamp_s}, {"content_frame", s.content_segment}});
  }
  return {{"slots", std::move(slots)},
          {"prompt", prompt.text},
          {"target_ranges", ranges_json(prompt.target.true_time_of_slot)},
          {"pi", shuffled.permutation}};
}

}  // namespace weavecache
