#pragma once

// JSON Lines replay format for frame streams:
//   {"t": <seconds>, "tokens": [[...], [...]], "label": "<optional>"}

#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "weavecache/core_math.hpp"
#include "weavecache/errors.hpp"
#include "weavecache/memory.hpp"

namespace weavecache {

struct FrameInput {
  double timestamp_s;
  TokenMatrix tokens;
  std::optional<std::string> label;
};

namespace detail {

inline ParseError line_error(std::size_t line, const std::string& what) {
  return ParseError("line " + std::to_string(line) + ": " + what);
}

/// Parses a non-empty array of equal-length numeric arrays.
inline TokenMatrix parse_token_rows(const nlohmann::json& j, std::size_t line, const char* field) {
  if (!j.is_array() || j.empty()) throw line_error(line, std::string("'") + field + "' must be a non-empty array");
  std::optional<TokenMatrix> m;
  for (const auto& row : j) {
    if (!row.is_array() || row.empty()) throw line_error(line, std::string("'") + field + "' rows must be non-empty arrays");
    std::vector<double> values;
    values.reserve(row.size());
    for (const auto& v : row) {
      if (!v.is_number()) throw line_error(line, std::string("'") + field + "' entries must be numbers");
      values.push_back(v.get<double>());
    }
    if (!m) m.emplace(values.size());
    if (values.size() != m->dim()) {
      throw line_error(line, std::string("ragged token dims in '") + field + "': " + std::to_string(m->dim()) +
                                 " vs " + std::to_string(values.size()));
    }
    try {
      m->push_back(values);
    } catch (const Error& e) {
      throw line_error(line, e.what());
    }
  }
  return std::move(*m);
}

inline nlohmann::json token_rows_json(const TokenMatrix& m) {
  auto rows = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

}  // namespace detail

inline FrameInput parse_frame_line(const std::string& text, std::size_t line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw detail::line_error(line, e.what());
  }
  if (!j.is_object()) throw detail::line_error(line, "expected a JSON object");
  if (!j.contains("t") || !j["t"].is_number()) throw detail::line_error(line, "missing numeric 't'");
  if (!j.contains("tokens")) throw detail::line_error(line, "missing 'tokens'");
  FrameInput f{j["t"].get<double>(), detail::parse_token_rows(j["tokens"], line, "tokens"), std::nullopt};
  if (j.contains("label") && !j["label"].is_null()) {
    if (!j["label"].is_string()) throw detail::line_error(line, "'label' must be a string");
    f.label = j["label"].get<std::string>();
  }
  return f;
}

/// Reads a whole stream; every frame must share the first frame's dimension.
/// Blank lines are skipped.
inline std::vector<FrameInput> read_frame_stream(std::istream& in) {
  std::vector<FrameInput> frames;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto f = parse_frame_line(text, line);
    if (!frames.empty() && f.tokens.dim() != frames.front().tokens.dim()) {
      throw detail::line_error(line, "ragged token dims across frames: " + std::to_string(frames.front().tokens.dim()) +
                                         " vs " + std::to_string(f.tokens.dim()));
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

inline nlohmann::json frame_json(const FrameInput& f) {
  nlohmann::json j{{"t", f.timestamp_s}, {"tokens", detail::token_rows_json(f.tokens)}};
  if (f.label) j["label"] = *f.label;
  return j;
}

inline void write_frame_stream(std::ostream& out, const std::vector<FrameInput>& frames) {
  for (const auto& f : frames) out << frame_json(f).dump() << '\n';
}

/// Appends every frame in order; errors carry the 1-based frame position.
inline void replay_into(MemoryBuffer& memory, const std::vector<FrameInput>& frames) {
  for (std::size_t i = 0; i < frames.size(); ++i) {
    try {
      memory.append(frames[i].timestamp_s, frames[i].tokens, frames[i].label);
    } catch (const TimeOrderError& e) {
      throw TimeOrderError("frame " + std::to_string(i + 1) + ": " + e.what());
    }
  }
}

}  // namespace weavecache
