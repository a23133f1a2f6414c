#pragma once

// Run configuration: every knob with its default, loadable from a
// sectioned key=value file and overridable key by key.
//
//   # sweep.conf
//   [gate]
//   delta_nats = 0.6
//   [retrieval]
//   k = 64
//   m_coarse = 256

#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include "weavecache/errors.hpp"
#include "weavecache/gate.hpp"
#include "weavecache/memory.hpp"
#include "weavecache/retrieval.hpp"
#include "weavecache/simulator.hpp"

namespace weavecache {

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class Int>
Int parse_integer(std::string_view key, std::string_view text) {
  Int v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" + std::string(text) + "'");
  }
  return v;
}

}  // namespace detail

/// Parses a real number; accepts "inf" / "infinity" for the never-recall threshold.
inline double parse_real(std::string_view key, std::string_view text) {
  const std::string s(detail::trim(text));
  if (s.empty()) throw ConfigError(std::string(key) + ": empty value");
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || errno == ERANGE || std::isnan(v)) {
    throw ConfigError(std::string(key) + ": expected a number, got '" + s + "'");
  }
  return v;
}

struct RunConfig {
  std::size_t window_c = kDefaultWindowFrames;                         // memory.window_c
  std::size_t k = kDefaultRecallFrames;                                // retrieval.k
  std::size_t m_coarse = default_coarse_candidates(kDefaultRecallFrames);  // retrieval.m_coarse
  double delta_nats = kDefaultDeltaNats;                               // gate.delta_nats
  double tau = kDefaultTau;                                            // answerer.tau
  StreamConfig stream;                                                 // stream.*
  std::size_t sope_group = 1;                                          // sope.group
  std::size_t sope_window = 0;                                         // sope.window (0 = whole stream)
  std::uint64_t sope_seed = 0;                                         // sope.seed

  void set(std::string_view key, std::string_view raw) {
    const std::string_view value = detail::trim(raw);
    using detail::parse_integer;
    if (key == "memory.window_c") window_c = parse_integer<std::size_t>(key, value);
    else if (key == "retrieval.k") k = parse_integer<std::size_t>(key, value);
    else if (key == "retrieval.m_coarse") m_coarse = parse_integer<std::size_t>(key, value);
    else if (key == "gate.delta_nats") delta_nats = parse_real(key, value);
    else if (key == "answerer.tau") tau = parse_real(key, value);
    else if (key == "stream.frames") stream.n_frames = parse_integer<std::size_t>(key, value);
    else if (key == "stream.dim") stream.dim = parse_integer<std::size_t>(key, value);
    else if (key == "stream.tokens_per_frame") stream.tokens_per_frame = parse_integer<std::size_t>(key, value);
    else if (key == "stream.query_tokens") stream.query_tokens = parse_integer<std::size_t>(key, value);
    else if (key == "stream.events") stream.n_events = parse_integer<std::size_t>(key, value);
    else if (key == "stream.noise_sigma") stream.noise_sigma = parse_real(key, value);
    else if (key == "stream.queries") stream.n_queries = parse_integer<std::size_t>(key, value);
    else if (key == "stream.horizon") stream.horizon = parse_horizon(value);
    else if (key == "stream.segment_frames") stream.segment_frames = parse_integer<std::size_t>(key, value);
    else if (key == "stream.options") stream.options_per_query = parse_integer<std::size_t>(key, value);
    else if (key == "stream.frame_interval_s") stream.frame_interval_s = parse_real(key, value);
    else if (key == "stream.seed") stream.seed = parse_integer<std::uint64_t>(key, value);
    else if (key == "sope.group") sope_group = parse_integer<std::size_t>(key, value);
    else if (key == "sope.window") sope_window = parse_integer<std::size_t>(key, value);
    else if (key == "sope.seed") sope_seed = parse_integer<std::uint64_t>(key, value);
    else throw ConfigError("unknown config key '" + std::string(key) + "'");
  }

  void validate() const {
    if (window_c < 1) throw ConfigError("memory.window_c must be >= 1");
    if (k < 1) throw ConfigError("retrieval.k must be >= 1");
    if (m_coarse < 1) throw ConfigError("retrieval.m_coarse must be >= 1");
    if (!(delta_nats >= 0.0)) throw ConfigError("gate.delta_nats must be >= 0");
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("answerer.tau must be finite and > 0");
    if (sope_group < 1) throw ConfigError("sope.group must be >= 1");
    stream_config().validate();
  }

  /// Stream parameters with the local window shared with the memory.
  StreamConfig stream_config() const {
    StreamConfig s = stream;
    s.window_c = window_c;
    return s;
  }

  EpisodeConfig episode() const { return {window_c, k, m_coarse, tau}; }
};

/// Reads `[section]` headers and `key = value` lines; `#` and `;` start comments.
inline void apply_config_text(RunConfig& cfg, std::string_view text) {
  std::string section;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view l = line;
    if (const auto c = l.find_first_of("#;"); c != std::string_view::npos) l = l.substr(0, c);
    l = detail::trim(l);
    if (l.empty()) continue;
    if (l.front() == '[') {
      if (l.back() != ']') throw ConfigError("config line " + std::to_string(line_no) + ": unterminated section header");
      section = std::string(detail::trim(l.substr(1, l.size() - 2)));
      continue;
    }
    const auto eq = l.find('=');
    if (eq == std::string_view::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = (section.empty() ? "" : section + ".") + std::string(detail::trim(l.substr(0, eq)));
    try {
      cfg.set(key, l.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  apply_config_text(cfg, buf.str());
}

}  // namespace weavecache
