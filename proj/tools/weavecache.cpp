// weavecache: stream generation, policy simulation, threshold sweeps,
// reorder-data export and retrieval cost benchmarks.
//
// Exit codes: 0 success, 1 domain error, 2 usage error.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "weavecache/weavecache.hpp"

namespace wc = weavecache;

namespace {

// Flags that map onto RunConfig keys. They are applied after the config
// file, so a flag given on the command line always wins.
class KeyedFlags {
 public:
  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    auto& slot = slots_.emplace_back();
    slot.key = key;
    slot.option = app->add_option(flag, slot.value, help + " [" + key + "]");
  }

  void apply(wc::RunConfig& cfg) const {
    for (const auto& s : slots_) {
      if (s.option->count() > 0) cfg.set(s.key, s.value);
    }
  }

 private:
  struct Slot {
    std::string key;
    std::string value;
    CLI::Option* option = nullptr;
  };
  std::deque<Slot> slots_;
};

void add_stream_flags(CLI::App* app, KeyedFlags& flags) {
  flags.add(app, "--frames", "stream.frames", "Frames in the generated stream");
  flags.add(app, "--dim", "stream.dim", "Key dimension");
  flags.add(app, "--tokens", "stream.tokens_per_frame", "Tokens per frame");
  flags.add(app, "--query-tokens", "stream.query_tokens", "Tokens per query");
  flags.add(app, "--events", "stream.events", "Number of event clusters");
  flags.add(app, "--sigma", "stream.noise_sigma", "Token noise standard deviation");
  flags.add(app, "--n-queries", "stream.queries", "Number of queries");
  flags.add(app, "--horizon", "stream.horizon", "current, past or mixed");
  flags.add(app, "--segment", "stream.segment_frames", "Frames per event segment");
  flags.add(app, "--options", "stream.options", "Answer options per query");
  flags.add(app, "--interval", "stream.frame_interval_s", "Seconds between frames");
  flags.add(app, "--seed", "stream.seed", "Stream seed");
  flags.add(app, "--window", "memory.window_c", "Local window length C");
}

void add_answer_flags(CLI::App* app, KeyedFlags& flags) {
  flags.add(app, "--k", "retrieval.k", "Frames recalled per query");
  flags.add(app, "--m-coarse", "retrieval.m_coarse", "Coarse candidates kept for reranking");
  flags.add(app, "--tau", "answerer.tau", "Answerer softmax temperature");
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw wc::ParseError("cannot open '" + path + "'");
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw wc::ConfigError("cannot write '" + path + "'");
  return out;
}

std::string sibling_queries_path(const std::string& frames_path) {
  const auto p = std::filesystem::path(frames_path).parent_path() / "queries.jsonl";
  if (std::filesystem::path(frames_path).filename() == "queries.jsonl") {
    throw wc::ConfigError("frame file may not be named queries.jsonl; pass --queries explicitly");
  }
  return p.string();
}

wc::Stream load_or_generate(const wc::RunConfig& cfg, const std::string& stream_path, std::string queries_path) {
  if (stream_path.empty()) return wc::generate_stream(cfg.stream_config());
  if (queries_path.empty()) queries_path = sibling_queries_path(stream_path);
  auto frames = open_in(stream_path);
  auto queries = open_in(queries_path);
  return wc::load_stream(frames, queries);
}

std::size_t worker_threads(std::size_t jobs) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("WEAVECACHE_THREADS")) {
    const auto cap = wc::detail::parse_integer<std::size_t>("WEAVECACHE_THREADS", wc::detail::trim(env));
    if (cap == 0) throw wc::ConfigError("WEAVECACHE_THREADS must be >= 1");
    n = std::min(n, cap);
  }
  return std::min(n, jobs);
}

nlohmann::json json_real(double v) { return std::isinf(v) ? nlohmann::json(wc::csv_number(v)) : nlohmann::json(v); }

// Parses "0.2,0.4,..." into a sorted list without duplicates. Duplicates are
// reported on stderr.
std::vector<double> parse_deltas(const std::string& text, bool warn) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(wc::parse_real("threshold", item));
  if (!text.empty() && text.back() == ',') throw wc::ConfigError("trailing comma");
  if (out.empty()) throw wc::ConfigError("expected at least one threshold");
  for (double d : out) {
    if (d < 0.0) throw wc::ConfigError("thresholds must be >= 0");
  }
  std::sort(out.begin(), out.end());
  const auto before = out.size();
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (warn && out.size() != before) {
    std::cerr << "warning: dropped " << (before - out.size()) << " duplicate threshold(s)\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_generate(const wc::RunConfig& cfg, const std::string& out_path, std::string queries_path) {
  const auto stream = wc::generate_stream(cfg.stream_config());
  if (queries_path.empty()) queries_path = sibling_queries_path(out_path);
  auto frames = open_out(out_path);
  wc::write_frame_stream(frames, stream.frames);
  auto queries = open_out(queries_path);
  wc::write_queries(queries, stream.queries);
  std::cout << "wrote " << stream.frames.size() << " frames to " << out_path << " and " << stream.queries.size()
            << " queries to " << queries_path << '\n';
  return 0;
}

int cmd_simulate(const wc::RunConfig& cfg, const std::string& policy_name, const std::string& stream_path,
                 const std::string& queries_path, const std::string& trace_path, bool json) {
  wc::Policy policy = wc::Policy::gated(cfg.delta_nats);
  if (policy_name == "local_only") policy = wc::Policy::local_only();
  if (policy_name == "always_recall") policy = wc::Policy::always_recall();

  const auto stream = load_or_generate(cfg, stream_path, queries_path);
  const auto result = wc::run_episode(stream, policy, cfg.episode());

  if (!trace_path.empty()) {
    auto out = open_out(trace_path);
    for (std::size_t i = 0; i < result.traces.size(); ++i) {
      auto j = wc::trace_json(result.traces[i]);
      j["query"] = i;
      j["correct_option"] = stream.queries[i].correct_option;
      out << j.dump() << '\n';
    }
  }
  if (json) {
    nlohmann::json j{{"policy", policy_name}, {"delta", json_real(policy.threshold())}};
    j["metrics"] = wc::metrics_json(result.metrics);
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << wc::kSweepCsvHeader << '\n' << wc::csv_row(policy.threshold(), result.metrics) << '\n';
  }
  return 0;
}

int cmd_sweep(const wc::RunConfig& cfg, const std::string& deltas_text, const std::string& stream_path,
              const std::string& queries_path, const std::string& out_path, bool json) {
  const auto deltas = parse_deltas(deltas_text, true);
  const auto stream = load_or_generate(cfg, stream_path, queries_path);
  const auto rows = wc::sweep_threshold(stream, deltas, cfg.episode(), worker_threads(deltas.size()));

  std::ofstream file;
  if (!out_path.empty()) file = open_out(out_path);
  std::ostream& out = out_path.empty() ? std::cout : file;
  if (json) {
    auto j = nlohmann::json::array();
    for (const auto& r : rows) {
      auto row = wc::metrics_json(r.metrics);
      row["delta"] = json_real(r.delta);
      j.push_back(std::move(row));
    }
    out << j.dump(2) << '\n';
  } else {
    wc::write_sweep_csv(out, rows);
  }
  return 0;
}

int cmd_shuffle(const wc::RunConfig& cfg, const std::string& in_path, const std::string& out_path) {
  auto in = open_in(in_path);
  const auto frames = wc::read_frame_stream(in);
  if (frames.empty()) throw wc::EmptyInputError("'" + in_path + "' has no frames");
  std::vector<double> ts;
  ts.reserve(frames.size());
  for (const auto& f : frames) ts.push_back(f.timestamp_s);
  const auto ranges = wc::frame_time_ranges(ts);

  const std::size_t window = cfg.sope_window ? cfg.sope_window : ranges.size();
  auto out = open_out(out_path);
  std::size_t examples = 0;
  for (std::size_t begin = 0; begin < ranges.size(); begin += window) {
    const std::size_t end = std::min(begin + window, ranges.size());
    const std::vector<wc::TimeRange> clip(ranges.begin() + static_cast<std::ptrdiff_t>(begin),
                                          ranges.begin() + static_cast<std::ptrdiff_t>(end));
    const auto shuffled = wc::shuffle_with_timestamps(wc::group_ranges(clip, cfg.sope_group), wc::mix_seed(cfg.sope_seed, examples));
    out << wc::sope_example_json(shuffled, wc::build_reorder_prompt(shuffled.sequence)).dump() << '\n';
    ++examples;
  }
  std::cout << "wrote " << examples << " example(s) to " << out_path << '\n';
  return 0;
}

// Prediction lines are either a bare array of [start, end] ranges or an
// object with "ranges" (or "target_ranges", so a truth file scores itself).
std::vector<wc::TimeRange> parse_prediction(const std::string& text, std::size_t line) {
  const std::string where = "prediction line " + std::to_string(line);
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.is_array()) return wc::parse_ranges(j, where);
    if (j.contains("ranges")) return wc::parse_ranges(j.at("ranges"), where);
    return wc::parse_ranges(j.at("target_ranges"), where);
  } catch (const nlohmann::json::exception& e) {
    throw wc::ParseError(where + ": " + e.what());
  }
}

std::vector<std::string> nonblank_lines(std::istream& in) {
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) out.push_back(line);
  }
  return out;
}

int cmd_eval_reorder(const std::string& pred_path, const std::string& truth_path, bool json) {
  auto pred_in = open_in(pred_path);
  auto truth_in = open_in(truth_path);
  const auto preds = nonblank_lines(pred_in);
  const auto truths = nonblank_lines(truth_in);
  if (preds.size() != truths.size()) {
    throw wc::ShapeError("prediction file has " + std::to_string(preds.size()) + " examples, truth file has " +
                         std::to_string(truths.size()));
  }
  wc::ReorderHistogram hist;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    wc::ReorderTarget target;
    try {
      target.true_time_of_slot = wc::parse_ranges(nlohmann::json::parse(truths[i]).at("target_ranges"),
                                                  "truth line " + std::to_string(i + 1));
    } catch (const nlohmann::json::exception& e) {
      throw wc::ParseError("truth line " + std::to_string(i + 1) + ": " + e.what());
    }
    try {
      hist.add(wc::score_reorder(parse_prediction(preds[i], i + 1), target));
    } catch (const wc::ShapeError& e) {
      throw wc::ShapeError("example " + std::to_string(i + 1) + ": " + e.what());
    }
  }

  if (json) {
    nlohmann::json j{{"buckets", hist.buckets},
                     {"examples", hist.count},
                     {"mean_exact_match", hist.mean_exact()},
                     {"mean_kendall_tau", hist.mean_tau()}};
    std::cout << j.dump(2) << '\n';
    return 0;
  }
  std::cout << "exact_match,examples\n";
  for (std::size_t b = 0; b < hist.buckets.size(); ++b) {
    std::cout << wc::format_seconds(static_cast<double>(b) / 10.0).substr(0, 3) << ',' << hist.buckets[b] << '\n';
  }
  std::cout << "# examples " << hist.count << ", mean exact match " << wc::csv_number(hist.mean_exact())
            << ", mean kendall tau " << wc::csv_number(hist.mean_tau()) << '\n';
  return 0;
}

struct BenchShape {
  std::size_t frames = 10000;
  std::size_t tokens = 8;
  std::size_t query_tokens = 8;
  std::size_t dim = 32;
  std::uint64_t seed = 0;
};

int cmd_bench(const wc::RunConfig& cfg, const BenchShape& shape, bool json) {
  if (shape.frames < 1 || shape.tokens < 1 || shape.query_tokens < 1 || shape.dim < 1) {
    throw wc::ConfigError("bench sizes must all be >= 1");
  }
  wc::Rng rng(shape.seed);
  auto tokens = [&](std::size_t rows) {
    wc::TokenMatrix m(shape.dim);
    std::vector<double> row(shape.dim);
    for (std::size_t r = 0; r < rows; ++r) {
      for (double& x : row) x = rng.normal();
      m.push_back(row);
    }
    return m;
  };
  wc::MemoryBuffer memory(shape.dim, cfg.window_c);
  for (std::size_t i = 0; i < shape.frames; ++i) memory.append(static_cast<double>(i), tokens(shape.tokens));
  const wc::QueryRecord q(tokens(shape.query_tokens));
  const auto view = memory.snapshot();

  struct Row {
    std::string stage;
    std::uint64_t sim_ops;
    double wall_ms;
  };
  auto timed = [](auto&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    auto r = fn();
    return std::pair{std::move(r), std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count()};
  };
  std::vector<Row> rows;
  {
    auto [r, ms] = timed([&] { return wc::fine_oracle(view, q, cfg.k); });
    rows.push_back({"fine", r.sim_ops, ms});
  }
  {
    auto [r, ms] = timed([&] { return wc::c2f_load(view, q, cfg.m_coarse, cfg.k); });
    rows.push_back({"c2f", r.sim_ops, ms});
  }
  {
    auto [r, ms] = timed([&] { return wc::coarse_load(view, q, cfg.m_coarse); });
    rows.push_back({"coarse", r.sim_ops, ms});
  }
  const double fine_ops = static_cast<double>(rows.front().sim_ops);

  if (json) {
    auto j = nlohmann::json::array();
    for (const auto& r : rows) {
      j.push_back({{"stage", r.stage},
                   {"frames", shape.frames},
                   {"k", cfg.k},
                   {"m_coarse", cfg.m_coarse},
                   {"sim_ops", r.sim_ops},
                   {"wall_ms", r.wall_ms},
                   {"reduction_vs_fine", fine_ops / static_cast<double>(r.sim_ops)}});
    }
    std::cout << j.dump(2) << '\n';
    return 0;
  }
  std::cout << "stage,frames,k,m_coarse,sim_ops,wall_ms,reduction_vs_fine\n";
  for (const auto& r : rows) {
    std::cout << r.stage << ',' << shape.frames << ',' << cfg.k << ',' << cfg.m_coarse << ',' << r.sim_ops << ','
              << wc::csv_number(r.wall_ms) << ',' << wc::csv_number(fine_ops / static_cast<double>(r.sim_ops)) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming frame memory with entropy-gated recall."};
  app.name("weavecache");
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "Config file with [section] key = value lines");

  KeyedFlags flags;
  std::function<int(const wc::RunConfig&)> run;

  // generate
  auto* gen = app.add_subcommand("generate", "Write a synthetic stream and its queries as JSON Lines");
  std::string gen_out, gen_queries;
  gen->add_option("--out", gen_out, "Frame file")->required();
  gen->add_option("--queries", gen_queries, "Query file (default: queries.jsonl next to --out)");
  add_stream_flags(gen, flags);
  gen->callback([&] { run = [&](const wc::RunConfig& cfg) { return cmd_generate(cfg, gen_out, gen_queries); }; });

  // simulate
  auto* sim = app.add_subcommand("simulate", "Run one policy over a stream and print its metrics");
  std::string policy = "gated", sim_stream, sim_queries, sim_trace;
  bool sim_json = false;
  sim->add_option("--policy", policy, "local_only, always_recall or gated")
      ->check(CLI::IsMember({"local_only", "always_recall", "gated"}));
  flags.add(sim, "--delta", "gate.delta_nats", "Entropy threshold in nats (inf never recalls)");
  sim->add_option("--stream", sim_stream, "Frame file (default: generate from the stream flags)");
  sim->add_option("--queries", sim_queries, "Query file (default: queries.jsonl next to --stream)");
  sim->add_option("--trace", sim_trace, "Write one JSON trace per query to this file");
  sim->add_flag("--json", sim_json, "Print JSON instead of CSV");
  add_stream_flags(sim, flags);
  add_answer_flags(sim, flags);
  sim->callback([&] {
    run = [&](const wc::RunConfig& cfg) { return cmd_simulate(cfg, policy, sim_stream, sim_queries, sim_trace, sim_json); };
  });

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Run the gated policy at several thresholds");
  std::string deltas = "0,0.2,0.4,0.6,0.8,1.0,1.2,1.4", sweep_stream, sweep_queries, sweep_out;
  bool sweep_json = false;
  sweep->add_option("--deltas", deltas, "Comma-separated thresholds in nats")->capture_default_str()->check([](const std::string& s) {
    try {
      parse_deltas(s, false);
    } catch (const wc::ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  });
  sweep->add_option("--stream", sweep_stream, "Frame file (default: generate from the stream flags)");
  sweep->add_option("--queries", sweep_queries, "Query file (default: queries.jsonl next to --stream)");
  sweep->add_option("--out", sweep_out, "Write the table here instead of stdout");
  sweep->add_flag("--json", sweep_json, "Write JSON instead of CSV");
  add_stream_flags(sweep, flags);
  add_answer_flags(sweep, flags);
  sweep->callback([&] {
    run = [&](const wc::RunConfig& cfg) { return cmd_sweep(cfg, deltas, sweep_stream, sweep_queries, sweep_out, sweep_json); };
  });

  // shuffle
  auto* shuffle = app.add_subcommand("shuffle", "Export shuffled-segment reorder examples from a frame file");
  std::string shuffle_in, shuffle_out;
  shuffle->add_option("--in", shuffle_in, "Frame file")->required();
  shuffle->add_option("--out", shuffle_out, "Example file")->required();
  flags.add(shuffle, "--group", "sope.group", "Frames per segment");
  flags.add(shuffle, "--window", "sope.window", "Frames per example (0: the whole stream)");
  flags.add(shuffle, "--seed", "sope.seed", "Shuffle seed");
  shuffle->callback([&] { run = [&](const wc::RunConfig& cfg) { return cmd_shuffle(cfg, shuffle_in, shuffle_out); }; });

  // eval-reorder
  auto* eval = app.add_subcommand("eval-reorder", "Score predicted time ranges against reorder examples");
  std::string pred_path, truth_path;
  bool eval_json = false;
  eval->add_option("--pred", pred_path, "Predictions, one line per example")->required();
  eval->add_option("--truth", truth_path, "Examples written by shuffle")->required();
  eval->add_flag("--json", eval_json, "Print JSON instead of CSV");
  eval->callback([&] { run = [&](const wc::RunConfig&) { return cmd_eval_reorder(pred_path, truth_path, eval_json); }; });

  // bench
  auto* bench = app.add_subcommand("bench", "Compare retrieval cost of the fine, coarse and coarse-to-fine passes");
  BenchShape shape;
  bool bench_json = false;
  bench->add_option("--frames", shape.frames, "Frames in memory")->capture_default_str();
  bench->add_option("--tokens", shape.tokens, "Tokens per frame")->capture_default_str();
  bench->add_option("--query-tokens", shape.query_tokens, "Tokens per query")->capture_default_str();
  bench->add_option("--dim", shape.dim, "Key dimension")->capture_default_str();
  bench->add_option("--seed", shape.seed, "Seed")->capture_default_str();
  bench->add_flag("--json", bench_json, "Print JSON instead of CSV");
  add_answer_flags(bench, flags);
  bench->callback([&] { run = [&](const wc::RunConfig& cfg) { return cmd_bench(cfg, shape, bench_json); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    wc::RunConfig cfg;
    if (!config_path.empty()) wc::apply_config_file(cfg, config_path);
    flags.apply(cfg);
    cfg.validate();
    return run(cfg);
  } catch (const wc::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
