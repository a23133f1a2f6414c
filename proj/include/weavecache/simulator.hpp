#pragma once

// Planted-relevance streams and policy evaluation.
//
// A stream is a run of segments, each showing one of n_events event clusters.
// Frame tokens are the event centroid plus isotropic Gaussian noise; queries
// are drawn near one event's centroid, and the answer options are that
// centroid plus distractor centroids. Ground truth (relevant frames, correct
// option) is exact by construction.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "weavecache/core_math.hpp"
#include "weavecache/errors.hpp"
#include "weavecache/memory.hpp"
#include "weavecache/pipeline.hpp"
#include "weavecache/random.hpp"
#include "weavecache/retrieval.hpp"
#include "weavecache/stream_io.hpp"

namespace weavecache {

enum class QueryHorizon { Current, Past, Mixed };

inline std::string_view to_string(QueryHorizon h) {
  switch (h) {
    case QueryHorizon::Current: return "current";
    case QueryHorizon::Past: return "past";
    case QueryHorizon::Mixed: return "mixed";
  }
  return "unknown";
}

inline QueryHorizon parse_horizon(std::string_view s) {
  if (s == "current") return QueryHorizon::Current;
  if (s == "past") return QueryHorizon::Past;
  if (s == "mixed") return QueryHorizon::Mixed;
  throw ConfigError("unknown query horizon '" + std::string(s) + "' (expected current, past or mixed)");
}

struct StreamConfig {
  std::size_t n_frames = 500;
  std::size_t dim = 16;
  std::size_t tokens_per_frame = 4;
  std::size_t query_tokens = 4;
  std::size_t n_events = 8;
  double noise_sigma = 0.5;
  std::size_t n_queries = 100;
  QueryHorizon horizon = QueryHorizon::Mixed;
  std::size_t segment_frames = 40;     // frames per event segment
  std::size_t options_per_query = 4;   // clamped to n_events
  std::size_t window_c = kDefaultWindowFrames;  // local window that defines "current" vs "past"
  double frame_interval_s = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    auto fail = [](const std::string& what) { throw ConfigError(what); };
    if (n_frames < 1) fail("frames must be >= 1");
    if (dim < 2) fail("dim must be >= 2 (got " + std::to_string(dim) + ")");
    if (tokens_per_frame < 1) fail("tokens per frame must be >= 1");
    if (query_tokens < 1) fail("query tokens must be >= 1");
    if (n_events < 1) fail("events must be >= 1");
    if (n_events > n_frames) fail("events must be <= frames (" + std::to_string(n_events) + " > " + std::to_string(n_frames) + ")");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) fail("noise sigma must be finite and >= 0");
    if (segment_frames < 1) fail("segment length must be >= 1");
    if (options_per_query < 1) fail("options per query must be >= 1");
    if (window_c < 1) fail("window C must be >= 1");
    if (!(frame_interval_s > 0.0) || !std::isfinite(frame_interval_s)) fail("frame interval must be finite and > 0");
  }
};

struct QuerySpec {
  double timestamp_s;                    // sees every frame with timestamp <= this
  TokenMatrix tokens;
  std::vector<Embedding> options;
  std::size_t correct_option;
  std::vector<std::uint64_t> relevant;   // ascending frame ids
  QueryHorizon horizon;                  // Current or Past
  std::size_t event;
};

struct Stream {
  std::size_t dim;
  std::vector<FrameInput> frames;
  std::vector<QuerySpec> queries;  // ascending timestamp
};

namespace detail {

inline std::vector<std::vector<double>> event_centroids(std::size_t n_events, std::size_t dim, Rng& rng) {
  std::vector<std::vector<double>> out;
  for (std::size_t e = 0; e < n_events; ++e) {
    std::vector<double> v(dim);
    for (;;) {
      for (double& x : v) x = rng.normal();
      // Gram-Schmidt while there is room, so centroids are orthonormal when n_events <= dim.
      if (e < dim) {
        for (const auto& u : out) {
          const double p = dot(v, u);
          for (std::size_t d = 0; d < dim; ++d) v[d] -= p * u[d];
        }
      }
      const double n = norm(v);
      if (n > 1e-6) {
        for (double& x : v) x /= n;
        break;
      }
    }
    out.push_back(std::move(v));
  }
  return out;
}

inline TokenMatrix noisy_tokens(const std::vector<double>& centroid, std::size_t count, double sigma, Rng& rng) {
  TokenMatrix m(centroid.size());
  std::vector<double> row(centroid.size());
  for (std::size_t t = 0; t < count; ++t) {
    for (std::size_t d = 0; d < row.size(); ++d) row[d] = centroid[d] + sigma * rng.normal();
    m.push_back(row);
  }
  return m;
}

}  // namespace detail

/// Builds a stream and its queries. Fully determined by cfg (including seed).
inline Stream generate_stream(const StreamConfig& cfg) {
  cfg.validate();
  Rng rng(mix_seed(cfg.seed, 1));
  const auto centroids = detail::event_centroids(cfg.n_events, cfg.dim, rng);

  // Event timeline: segments of segment_frames, no event repeated back to back.
  std::vector<std::size_t> event_of(cfg.n_frames);
  std::size_t current = static_cast<std::size_t>(rng.below(cfg.n_events));
  for (std::size_t i = 0; i < cfg.n_frames; ++i) {
    if (i > 0 && i % cfg.segment_frames == 0 && cfg.n_events > 1) {
      std::size_t next = static_cast<std::size_t>(rng.below(cfg.n_events - 1));
      current = next >= current ? next + 1 : next;
    }
    event_of[i] = current;
  }

  Stream s;
  s.dim = cfg.dim;
  s.frames.reserve(cfg.n_frames);
  for (std::size_t i = 0; i < cfg.n_frames; ++i) {
    s.frames.push_back({static_cast<double>(i) * cfg.frame_interval_s,
                        detail::noisy_tokens(centroids[event_of[i]], cfg.tokens_per_frame, cfg.noise_sigma, rng),
                        "event_" + std::to_string(event_of[i])});
  }

  // Horizons: mixed streams split queries exactly in half (current first, then shuffled).
  std::vector<QueryHorizon> horizons(cfg.n_queries, cfg.horizon);
  if (cfg.horizon == QueryHorizon::Mixed) {
    for (std::size_t q = 0; q < cfg.n_queries; ++q) horizons[q] = q < cfg.n_queries / 2 ? QueryHorizon::Current : QueryHorizon::Past;
    rng.shuffle(horizons);
  }

  const std::size_t n_options = std::min(cfg.options_per_query, cfg.n_events);
  constexpr int kMaxPlacementTries = 10000;
  for (QueryHorizon horizon : horizons) {
    std::size_t at = 0;
    std::size_t target = 0;
    std::set<std::size_t> in_window;
    bool placed = false;
    for (int attempt = 0; attempt < kMaxPlacementTries && !placed; ++attempt) {
      at = static_cast<std::size_t>(rng.below(cfg.n_frames));
      const std::size_t window_start = at + 1 >= cfg.window_c ? at + 1 - cfg.window_c : 0;
      in_window = std::set<std::size_t>(event_of.begin() + static_cast<std::ptrdiff_t>(window_start),
                                        event_of.begin() + static_cast<std::ptrdiff_t>(at) + 1);
      if (horizon == QueryHorizon::Current) {
        target = event_of[at];
        placed = true;
        continue;
      }
      std::set<std::size_t> seen_before(event_of.begin(), event_of.begin() + static_cast<std::ptrdiff_t>(window_start));
      std::vector<std::size_t> eligible;
      for (std::size_t e : seen_before) {
        if (!in_window.count(e)) eligible.push_back(e);
      }
      if (!eligible.empty()) {
        target = eligible[static_cast<std::size_t>(rng.below(eligible.size()))];
        placed = true;
      }
    }
    if (!placed) throw ConfigError("cannot place a past-horizon query: no event leaves the local window");

    // Distractors come from events outside the local window first, so that a
    // confident local answer is informative; visible events only top up.
    std::vector<std::size_t> hidden, visible;
    for (std::size_t e = 0; e < cfg.n_events; ++e) {
      if (e == target) continue;
      (in_window.count(e) ? visible : hidden).push_back(e);
    }
    rng.shuffle(hidden);
    rng.shuffle(visible);
    hidden.insert(hidden.end(), visible.begin(), visible.end());
    std::vector<std::size_t> option_events{target};
    option_events.insert(option_events.end(), hidden.begin(), hidden.begin() + static_cast<std::ptrdiff_t>(n_options - 1));
    rng.shuffle(option_events);

    QuerySpec q{(static_cast<double>(at) + 0.5) * cfg.frame_interval_s,
                detail::noisy_tokens(centroids[target], cfg.query_tokens, cfg.noise_sigma, rng),
                {},
                0,
                {},
                horizon,
                target};
    for (std::size_t o = 0; o < option_events.size(); ++o) {
      q.options.emplace_back(centroids[option_events[o]]);
      if (option_events[o] == target) q.correct_option = o;
    }
    for (std::size_t i = 0; i <= at; ++i) {
      if (event_of[i] == target) q.relevant.push_back(i);
    }
    s.queries.push_back(std::move(q));
  }
  std::stable_sort(s.queries.begin(), s.queries.end(),
                   [](const QuerySpec& a, const QuerySpec& b) { return a.timestamp_s < b.timestamp_s; });
  return s;
}

// ---------------------------------------------------------------------------
// Stream files: frames in the memory JSONL format, queries in a sibling file:
//   {"t": s, "tokens": [[...]], "options": [[...]], "correct": i,
//    "relevant": [ids], "horizon": "past", "event": e}

inline nlohmann::json query_json(const QuerySpec& q) {
  auto options = nlohmann::json::array();
  for (const auto& o : q.options) options.push_back(std::vector<double>(o.values().begin(), o.values().end()));
  return {{"t", q.timestamp_s},
          {"tokens", detail::token_rows_json(q.tokens)},
          {"options", std::move(options)},
          {"correct", q.correct_option},
          {"relevant", q.relevant},
          {"horizon", std::string(to_string(q.horizon))},
          {"event", q.event}};
}

inline void write_queries(std::ostream& out, const std::vector<QuerySpec>& queries) {
  for (const auto& q : queries) out << query_json(q).dump() << '\n';
}

inline std::vector<QuerySpec> read_queries(std::istream& in) {
  std::vector<QuerySpec> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
      QuerySpec q{j.at("t").get<double>(),
                  detail::parse_token_rows(j.at("tokens"), line, "tokens"),
                  {},
                  j.at("correct").get<std::size_t>(),
                  j.at("relevant").get<std::vector<std::uint64_t>>(),
                  parse_horizon(j.value("horizon", std::string("current"))),
                  j.value("event", std::size_t{0})};
      const TokenMatrix opts = detail::parse_token_rows(j.at("options"), line, "options");
      for (std::size_t r = 0; r < opts.rows(); ++r) {
        q.options.emplace_back(std::vector<double>(opts.row(r).begin(), opts.row(r).end()));
      }
      if (q.correct_option >= q.options.size()) throw detail::line_error(line, "'correct' is out of range");
      out.push_back(std::move(q));
    } catch (const nlohmann::json::exception& e) {
      throw detail::line_error(line, e.what());
    }
  }
  return out;
}

inline Stream load_stream(std::istream& frames_in, std::istream& queries_in) {
  Stream s;
  s.frames = read_frame_stream(frames_in);
  if (s.frames.empty()) throw ParseError("stream has no frames");
  s.dim = s.frames.front().tokens.dim();
  s.queries = read_queries(queries_in);
  std::stable_sort(s.queries.begin(), s.queries.end(),
                   [](const QuerySpec& a, const QuerySpec& b) { return a.timestamp_s < b.timestamp_s; });
  for (const auto& q : s.queries) {
    if (q.tokens.dim() != s.dim) throw DimensionError("query dimension does not match the stream");
  }
  return s;
}

// ---------------------------------------------------------------------------
// Episodes

/// Recall policies expressed as gate thresholds.
struct Policy {
  enum class Kind { LocalOnly, AlwaysRecall, Gated };
  Kind kind = Kind::Gated;
  double delta = kDefaultDeltaNats;

  static Policy local_only() { return {Kind::LocalOnly, kNeverRecall}; }
  static Policy always_recall() { return {Kind::AlwaysRecall, 0.0}; }
  static Policy gated(double delta) { return {Kind::Gated, delta}; }

  double threshold() const noexcept {
    switch (kind) {
      case Kind::LocalOnly: return kNeverRecall;
      case Kind::AlwaysRecall: return 0.0;
      case Kind::Gated: return delta;
    }
    return delta;
  }
};

struct EpisodeConfig {
  std::size_t window_c = kDefaultWindowFrames;
  std::size_t k = kDefaultRecallFrames;
  std::size_t m_coarse = 0;  // 0 selects 4k
  double tau = kDefaultTau;
};

struct EpisodeMetrics {
  double recall_at_k = 0.0;
  double answer_accuracy = 0.0;
  double mean_sim_ops = 0.0;
  double recall_trigger_rate = 0.0;
  double mean_wall_ms = 0.0;
};

struct EpisodeResult {
  EpisodeMetrics metrics;
  std::vector<AnswerTrace> traces;  // one per query, in query order
};

/// |retrieved ∩ relevant| / min(|relevant|, k).
inline double recall_at_k(const RetrievalResult& retrieved, const std::vector<std::uint64_t>& relevant, std::size_t k) {
  const std::size_t denom = std::min(relevant.size(), k);
  if (denom == 0) return 0.0;
  std::size_t hits = 0;
  for (const auto& e : retrieved.entries) {
    if (std::binary_search(relevant.begin(), relevant.end(), e.frame_id)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(denom);
}

/// Replays the stream frame by frame and answers each query once every frame
/// up to its timestamp has been appended. recall_at_k averages over the
/// queries that recalled (0 when none did).
inline EpisodeResult run_episode(const Stream& stream, const Policy& policy, const EpisodeConfig& cfg) {
  MemoryBuffer memory(stream.dim, cfg.window_c);
  const MockAnswerer answerer(cfg.tau);
  const AnswerConfig answer_cfg{policy.threshold(), cfg.k, cfg.m_coarse};

  EpisodeResult out;
  out.traces.reserve(stream.queries.size());
  std::size_t next_frame = 0;
  std::size_t correct = 0, recalls = 0;
  std::uint64_t sim_ops = 0;
  double recall_sum = 0.0, wall_sum = 0.0;

  for (const auto& q : stream.queries) {
    while (next_frame < stream.frames.size() && stream.frames[next_frame].timestamp_s <= q.timestamp_s) {
      const auto& f = stream.frames[next_frame++];
      memory.append(f.timestamp_s, f.tokens, f.label);
    }
    const QueryRecord query(q.tokens);
    AnswerTrace trace = answer_query(memory, query, q.options, answer_cfg, answerer);
    if (trace.chosen_option == q.correct_option) ++correct;
    if (trace.retrieved) {
      ++recalls;
      recall_sum += recall_at_k(*trace.retrieved, q.relevant, cfg.k);
    }
    sim_ops += trace.sim_ops_total;
    wall_sum += trace.wall_ms;
    out.traces.push_back(std::move(trace));
  }

  const auto n = static_cast<double>(stream.queries.size());
  if (n > 0) {
    out.metrics.answer_accuracy = static_cast<double>(correct) / n;
    out.metrics.recall_trigger_rate = static_cast<double>(recalls) / n;
    out.metrics.mean_sim_ops = static_cast<double>(sim_ops) / n;
    out.metrics.mean_wall_ms = wall_sum / n;
    out.metrics.recall_at_k = recalls ? recall_sum / static_cast<double>(recalls) : 0.0;
  }
  return out;
}

struct SweepRow {
  double delta;
  EpisodeMetrics metrics;
};

/// One episode per threshold on the same stream. Episodes run on up to
/// `threads` worker threads; rows come back in the order of `deltas`.
inline std::vector<SweepRow> sweep_threshold(const Stream& stream, const std::vector<double>& deltas,
                                             const EpisodeConfig& cfg, std::size_t threads = 1) {
  if (deltas.empty()) throw InvalidParameterError("threshold sweep needs at least one delta");
  std::vector<SweepRow> rows(deltas.size());
  std::vector<std::exception_ptr> errors(deltas.size());
  auto run = [&](std::size_t i) {
    try {
      rows[i] = {deltas[i], run_episode(stream, Policy::gated(deltas[i]), cfg).metrics};
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  threads = std::clamp<std::size_t>(threads, 1, deltas.size());
  if (threads == 1) {
    for (std::size_t i = 0; i < deltas.size(); ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < deltas.size(); i += threads) run(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return rows;
}

inline constexpr const char* kSweepCsvHeader =
    "delta,recall_at_k,answer_accuracy,mean_sim_ops,recall_trigger_rate,mean_wall_ms";

inline std::string csv_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

inline std::string csv_row(double delta, const EpisodeMetrics& m) {
  return csv_number(delta) + ',' + csv_number(m.recall_at_k) + ',' + csv_number(m.answer_accuracy) + ',' +
         csv_number(m.mean_sim_ops) + ',' + csv_number(m.recall_trigger_rate) + ',' + csv_number(m.mean_wall_ms);
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << kSweepCsvHeader << '\n';
  for (const auto& r : rows) out << csv_row(r.delta, r.metrics) << '\n';
}

inline nlohmann::json metrics_json(const EpisodeMetrics& m) {
  return {{"recall_at_k", m.recall_at_k},
          {"answer_accuracy", m.answer_accuracy},
          {"mean_sim_ops", m.mean_sim_ops},
          {"recall_trigger_rate", m.recall_trigger_rate},
          {"mean_wall_ms", m.mean_wall_ms}};
}

}  // namespace weavecache
