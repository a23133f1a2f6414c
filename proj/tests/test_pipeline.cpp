#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <thread>
#include <vector>

#include "support.hpp"
#include "weavecache/pipeline.hpp"
#include "weavecache/simulator.hpp"

using namespace weavecache;
using namespace weavecache::testing;
using Catch::Approx;

namespace {

std::vector<double> basis(std::size_t dim, std::size_t i) {
  std::vector<double> v(dim, 0.0);
  v[i] = 1.0;
  return v;
}

std::vector<Embedding> basis_options(std::size_t dim, std::initializer_list<std::size_t> axes) {
  std::vector<Embedding> out;
  for (auto a : axes) out.emplace_back(basis(dim, a));
  return out;
}

QueryRecord single_token_query(const std::vector<double>& v) {
  TokenMatrix m(v.size());
  m.push_back(v);
  return QueryRecord(std::move(m));
}

void append_unit(MemoryBuffer& m, double t, const std::vector<double>& v) {
  TokenMatrix tokens(v.size());
  tokens.push_back(v);
  m.append(t, std::move(tokens));
}

// Checks every trace field against its definition.
void check_trace(const AnswerTrace& t, const MemoryView& view, std::size_t window_c, const QueryRecord& q,
                 const AnswerConfig& cfg) {
  REQUIRE(t.visible_frames == view.size());
  CHECK(t.gate.entropy_nats == entropy(t.local_dist));
  CHECK(t.gate.branch == (t.gate.entropy_nats >= cfg.delta ? GateBranch::Recall : GateBranch::LocalAnswer));
  CHECK(t.chosen_option == argmax(t.final_dist));

  std::vector<std::uint64_t> local;
  for (const auto* f : view.tail(window_c)) local.push_back(f->frame_id);
  CHECK(t.local_frame_ids == local);

  if (t.gate.branch == GateBranch::LocalAnswer) {
    CHECK_FALSE(t.retrieved.has_value());
    CHECK(t.final_dist == t.local_dist);
    CHECK(t.sim_ops_total == 0);
    CHECK(t.context_frame_ids == t.local_frame_ids);
  } else {
    REQUIRE(t.retrieved.has_value());
    CHECK(t.retrieved->entries.size() <= cfg.k);
    CHECK(t.retrieved->stage == RetrievalStage::CoarseToFine);
    CHECK(t.sim_ops_total == c2f_cost(view, q, cfg.coarse_candidates()));
    for (std::size_t i = 1; i < t.context_frame_ids.size(); ++i) {
      CHECK(t.context_frame_ids[i - 1] < t.context_frame_ids[i]);
      CHECK(view[t.context_frame_ids[i - 1]].timestamp_s <= view[t.context_frame_ids[i]].timestamp_s);
    }
    for (auto id : t.local_frame_ids) CHECK(std::binary_search(t.context_frame_ids.begin(), t.context_frame_ids.end(), id));
    for (auto id : t.retrieved->frame_ids()) CHECK(std::binary_search(t.context_frame_ids.begin(), t.context_frame_ids.end(), id));
  }
  for (auto id : t.context_frame_ids) CHECK(id < view.size());
}

class FixedLengthAnswerer final : public Answerer {
 public:
  explicit FixedLengthAnswerer(std::size_t n) : n_(n) {}
  Distribution score(const FrameRefs&, const QueryRecord&, std::span<const Embedding>) const override {
    return Distribution::uniform(n_);
  }

 private:
  std::size_t n_;
};

}  // namespace

TEST_CASE("mock answerer examples", "[pipeline]") {
  MemoryBuffer m(4);
  append_unit(m, 0.0, basis(4, 0));
  const auto ctx = m.snapshot().all();
  const auto q = single_token_query(basis(4, 0));

  SECTION("sharp temperature concentrates on the matching option") {
    const auto d = MockAnswerer(1e-3).score(ctx, q, basis_options(4, {0, 1, 2}));
    CHECK(d[0] > 1.0 - 1e-12);
    CHECK(argmax(d) == 0);
  }
  SECTION("equidistant options give a uniform answer") {
    MemoryBuffer diag(4);
    append_unit(diag, 0.0, {1.0, 1.0, 1.0, 0.0});
    const auto d = MockAnswerer(0.1).score(diag.snapshot().all(), q, basis_options(4, {0, 1, 2}));
    CHECK(entropy(d) == Approx(std::log(3.0)).epsilon(0).margin(1e-12));
  }
  SECTION("unit temperature with logits 1 and 0") {
    const auto d = MockAnswerer(1.0).score(ctx, q, basis_options(4, {0, 1}));
    const double e = std::exp(1.0);
    CHECK(d[0] == Approx(e / (e + 1.0)).epsilon(0).margin(1e-12));
    CHECK(d[0] == Approx(0.7311).epsilon(0).margin(1e-4));
    CHECK(d[1] == Approx(0.2689).epsilon(0).margin(1e-4));
  }
  SECTION("the query does not enter the score") {
    const auto other = single_token_query(basis(4, 3));
    CHECK(MockAnswerer(0.1).score(ctx, q, basis_options(4, {0, 1})) ==
          MockAnswerer(0.1).score(ctx, other, basis_options(4, {0, 1})));
  }
  SECTION("validation") {
    CHECK_THROWS_AS(MockAnswerer(0.0), InvalidParameterError);
    CHECK_THROWS_AS(MockAnswerer(-1.0), InvalidParameterError);
    CHECK_THROWS_AS(MockAnswerer(std::numeric_limits<double>::infinity()), InvalidParameterError);
    CHECK_THROWS_AS(MockAnswerer(0.1).score({}, q, basis_options(4, {0})), EmptyInputError);
    CHECK_THROWS_AS(MockAnswerer(0.1).score(ctx, q, {}), EmptyInputError);
    std::vector<Embedding> zero{Embedding(std::vector<double>{0, 0, 0, 0})};
    CHECK_THROWS_WITH(MockAnswerer(0.1).score(ctx, q, zero), Catch::Matchers::ContainsSubstring("answer option 0"));
  }
}

TEST_CASE("answer inside the local window stays local", "[pipeline]") {
  MemoryBuffer m(4, 4);
  for (int i = 0; i < 10; ++i) append_unit(m, i, basis(4, 0));
  const auto q = single_token_query(basis(4, 0));
  const AnswerConfig cfg{0.6, 2, 8};
  const auto t = answer_query(m, q, basis_options(4, {1, 0, 2}), cfg, MockAnswerer(0.1));
  // Logits [0, 1, 0] at tau 0.1: H = ln(e^10 + 2) - 10 e^10 / (e^10 + 2).
  const double z = std::exp(10.0) + 2.0;
  CHECK(t.gate.entropy_nats == Approx(std::log(z) - 10.0 * std::exp(10.0) / z).epsilon(0).margin(1e-12));
  CHECK(t.gate.entropy_nats < 0.6);
  CHECK(t.gate.branch == GateBranch::LocalAnswer);
  CHECK_FALSE(t.retrieved.has_value());
  CHECK(t.chosen_option == 1);
  CHECK(t.local_frame_ids == std::vector<std::uint64_t>{6, 7, 8, 9});
  check_trace(t, m.snapshot(), 4, q, cfg);
}

TEST_CASE("answer far in the past is recalled", "[pipeline]") {
  MemoryBuffer m(4, 4);
  append_unit(m, 0.0, basis(4, 1));
  for (int i = 1; i < 20; ++i) append_unit(m, i, basis(4, 0));
  const auto q = single_token_query(basis(4, 1));
  const AnswerConfig cfg{0.6, 2, 8};
  const auto options = basis_options(4, {2, 1, 3});
  const auto t = answer_query(m, q, options, cfg, MockAnswerer(0.1));

  CHECK(t.gate.entropy_nats == Approx(std::log(3.0)).epsilon(0).margin(1e-12));
  REQUIRE(t.gate.branch == GateBranch::Recall);
  REQUIRE(t.retrieved.has_value());
  CHECK(t.retrieved->contains(0));
  CHECK(checked_fine(m.snapshot(), q, 2).entries.front().frame_id == 0);
  CHECK(t.chosen_option == 1);
  CHECK(t.context_frame_ids.front() == 0);
  check_trace(t, m.snapshot(), 4, q, cfg);
}

TEST_CASE("never-recall threshold matches the local-only policy", "[pipeline]") {
  StreamConfig sc;
  sc.n_frames = 200;
  sc.n_queries = 40;
  sc.seed = 3;
  const auto stream = generate_stream(sc);
  const auto never = run_episode(stream, Policy::gated(kNeverRecall), {});
  const auto local = run_episode(stream, Policy::local_only(), {});
  REQUIRE(never.traces.size() == local.traces.size());
  for (std::size_t i = 0; i < never.traces.size(); ++i) {
    CHECK(same_outcome(never.traces[i], local.traces[i]));
    CHECK(never.traces[i].gate.branch == GateBranch::LocalAnswer);
  }
}

TEST_CASE("trace invariants on random memories", "[pipeline][property]") {
  Rng rng(61);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t dim = 2 + rng.below(12);
    auto inst = random_instance(rng, 1 + rng.below(120), dim, 6, 6);
    std::vector<Embedding> options;
    const std::size_t n_options = 1 + rng.below(6);
    for (std::size_t o = 0; o < n_options; ++o) options.emplace_back(random_vector(rng, dim));
    const std::size_t window_c = 1 + rng.below(32);
    const AnswerConfig cfg{rng.uniform() * std::log(static_cast<double>(n_options) + 1.0), 1 + rng.below(16),
                           rng.below(40)};
    const double tau = 0.05 + rng.uniform();
    const auto view = inst.memory->snapshot();
    const auto t = answer_query(view, window_c, inst.query, options, cfg, MockAnswerer(tau));
    check_trace(t, view, window_c, inst.query, cfg);

    // Same inputs, same outcome.
    CHECK(same_outcome(t, answer_query(view, window_c, inst.query, options, cfg, MockAnswerer(tau))));
  }
}

TEST_CASE("answers over snapshots while frames are appended", "[pipeline][concurrency]") {
  Rng rng(62);
  const std::size_t dim = 8;
  MemoryBuffer m(dim, 16);
  m.append(0.0, random_tokens(rng, 3, dim));
  const QueryRecord q(random_tokens(rng, 3, dim));
  std::vector<Embedding> options;
  for (int o = 0; o < 4; ++o) options.emplace_back(random_vector(rng, dim));
  std::vector<TokenMatrix> pending;
  for (int i = 0; i < 600; ++i) pending.push_back(random_tokens(rng, 3, dim));

  const AnswerConfig cfg{0.0, 8, 32};
  std::thread writer([&] {
    for (std::size_t i = 0; i < pending.size(); ++i) m.append(1.0 + static_cast<double>(i), pending[i]);
  });
  std::vector<std::pair<MemoryView, AnswerTrace>> seen;
  for (int r = 0; r < 60; ++r) {
    const auto view = m.snapshot();
    seen.emplace_back(view, answer_query(view, 16, q, options, cfg, MockAnswerer(0.1)));
  }
  writer.join();
  for (const auto& [view, t] : seen) {
    check_trace(t, view, 16, q, cfg);
    CHECK(same_outcome(t, answer_query(view, 16, q, options, cfg, MockAnswerer(0.1))));
  }
}

TEST_CASE("answer_query errors", "[pipeline]") {
  MemoryBuffer m(4);
  const auto q = single_token_query(basis(4, 0));
  CHECK_THROWS_AS(answer_query(m, q, basis_options(4, {0}), {}, MockAnswerer(0.1)), EmptyMemoryError);
  append_unit(m, 0.0, basis(4, 0));
  CHECK_THROWS_AS(answer_query(m, q, {}, {}, MockAnswerer(0.1)), EmptyInputError);
  CHECK_THROWS_AS(answer_query(m, q, basis_options(4, {0, 1}), {}, FixedLengthAnswerer(3)), ShapeError);
  CHECK_THROWS_AS(answer_query(m, q, basis_options(4, {0}), AnswerConfig{-1.0}, MockAnswerer(0.1)), InvalidParameterError);
}

TEST_CASE("trace export", "[pipeline]") {
  MemoryBuffer m(4, 4);
  append_unit(m, 0.0, basis(4, 1));
  for (int i = 1; i < 8; ++i) append_unit(m, i, basis(4, 0));
  const auto q = single_token_query(basis(4, 1));

  const auto local = trace_json(answer_query(m, q, basis_options(4, {0, 1}), AnswerConfig{kNeverRecall}, MockAnswerer(0.1)));
  CHECK(local["v"] == 1);
  CHECK(local["gate"]["threshold_nats"] == "inf");
  CHECK(local["gate"]["branch"] == "local");
  CHECK(local["retrieved"].is_null());

  const auto recall = trace_json(answer_query(m, q, basis_options(4, {2, 1}), AnswerConfig{0.0, 2, 4}, MockAnswerer(0.1)));
  CHECK(recall["gate"]["branch"] == "recall");
  CHECK(recall["gate"]["threshold_nats"] == 0.0);
  CHECK(recall["retrieved"]["stage"] == "c2f");
  CHECK(recall["retrieved"]["entries"].size() == 2);
  CHECK(recall["retrieved"]["entries"][0]["frame_id"] == 0);
  CHECK(recall["chosen_option"] == 1);
}
