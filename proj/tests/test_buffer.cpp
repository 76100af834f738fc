#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "symreg/buffer.hpp"
#include "symreg/parser.hpp"

using namespace symreg;

namespace {
const std::vector<std::string> kX{"x"};

FitResult scored(double mape) {
  FitResult r;
  r.params.fill(1.0);
  r.metrics.mse = mape;  // placeholder; only the ranking field matters here
  r.metrics.nmse = mape;
  r.metrics.mape = mape;
  r.converged = true;
  return r;
}

FitResult unscored() {
  FitResult r;
  r.params.fill(1.0);
  r.failure_reason = "NaN/Inf objective";
  return r;
}
}  // namespace

TEST_CASE("first insert lands", "[buffer]") {
  ExperienceBuffer buffer;
  const Expr e = parse_expression("params[0]*x", kX);
  REQUIRE(buffer.insert(e, kX, scored(0.5), 1) == InsertOutcome::Inserted);
  REQUIRE(buffer.size() == 1);
}

TEST_CASE("lower score replaces, worse or equal does not", "[buffer]") {
  ExperienceBuffer buffer;
  const Expr e = parse_expression("params[0]*x", kX);
  buffer.insert(e, kX, scored(0.5), 1);
  REQUIRE(buffer.insert(e, kX, scored(0.1), 2) == InsertOutcome::Improved);
  REQUIRE(*buffer.best()->score == 0.1);
  REQUIRE(buffer.insert(e, kX, scored(0.3), 3) == InsertOutcome::DuplicateWorse);
  REQUIRE(buffer.insert(e, kX, scored(0.1), 4) == InsertOutcome::DuplicateWorse);
  REQUIRE(buffer.size() == 1);
  // the original discovery keeps its sequence through improvements
  REQUIRE(buffer.entries().front().sequence == 0);
}

TEST_CASE("commutative rewrites share one slot", "[buffer]") {
  ExperienceBuffer buffer;
  buffer.insert(parse_expression("params[0]*x + params[1]", kX), kX, scored(0.2), 1);
  const auto outcome =
      buffer.insert(parse_expression("params[1] + x*params[0]", kX), kX, scored(0.4), 2);
  REQUIRE(outcome == InsertOutcome::DuplicateWorse);
  REQUIRE(buffer.size() == 1);
}

TEST_CASE("unscored entries are stored but never ranked", "[buffer]") {
  ExperienceBuffer buffer;
  buffer.insert(parse_expression("log(x)", kX), kX, unscored(), 1);
  REQUIRE(buffer.size() == 1);
  REQUIRE(buffer.topk(5).empty());
  REQUIRE_FALSE(buffer.best());
  // a later scored duplicate upgrades it
  REQUIRE(buffer.insert(parse_expression("log(x)", kX), kX, scored(0.9), 2) ==
          InsertOutcome::Improved);
  REQUIRE(buffer.best()->score == 0.9);
}

TEST_CASE("topk orders by score then discovery", "[buffer]") {
  ExperienceBuffer buffer;
  buffer.insert(parse_expression("params[0]*x", kX), kX, scored(0.3), 1);
  buffer.insert(parse_expression("params[0]*sin(x)", kX), kX, scored(0.1), 1);
  buffer.insert(parse_expression("params[0]*exp(x)", kX), kX, scored(0.2), 2);
  buffer.insert(parse_expression("params[0]*cos(x)", kX), kX, scored(0.2), 3);
  const auto top = buffer.topk(3);
  REQUIRE(top.size() == 3);
  REQUIRE(*top[0].score == 0.1);
  REQUIRE(*top[1].score == 0.2);
  REQUIRE(top[1].canonical_text.find("exp") != std::string::npos);  // earlier at equal score
  REQUIRE(*top[2].score == 0.2);
  REQUIRE(buffer.topk(99).size() == 4);
  REQUIRE(*buffer.best()->score == 0.1);
}

TEST_CASE("topk equals a stable sort oracle", "[buffer]") {
  std::mt19937_64 rng(606);
  const char* shapes[] = {"params[0]*x",      "params[0]*sin(x)", "params[0]*cos(x)",
                          "params[0]*exp(x)", "params[0]*x**2",   "params[0]*sqrt(x)",
                          "params[0]*tanh(x)", "params[0]/x",     "params[0]*log(x)",
                          "params[0]*x**3"};
  for (int trial = 0; trial < 200; ++trial) {
    ExperienceBuffer buffer;
    struct Oracle {
      double score;
      std::uint64_t seq;
    };
    std::vector<std::pair<std::string, Oracle>> reference;
    const int inserts = 1 + static_cast<int>(rng() % 12);
    for (int i = 0; i < inserts; ++i) {
      const auto& shape = shapes[rng() % 10];
      const double score = static_cast<double>(rng() % 1000) / 1000.0;
      const Expr e = parse_expression(shape, kX);
      buffer.insert(e, kX, scored(score), 1);
      const std::string key = canonical_text(e, kX);
      bool found = false;
      for (auto& [k, v] : reference)
        if (k == key) {
          found = true;
          if (score < v.score) v.score = score;
        }
      if (!found)
        reference.emplace_back(key, Oracle{score, static_cast<std::uint64_t>(reference.size())});
    }
    std::stable_sort(reference.begin(), reference.end(), [](const auto& a, const auto& b) {
      if (a.second.score != b.second.score) return a.second.score < b.second.score;
      return a.second.seq < b.second.seq;
    });
    const std::size_t k = 1 + rng() % 6;
    const auto top = buffer.topk(k);
    REQUIRE(top.size() == std::min(k, reference.size()));
    for (std::size_t i = 0; i < top.size(); ++i) {
      REQUIRE(top[i].canonical_text == reference[i].first);
      REQUIRE(*top[i].score == reference[i].second.score);
    }
  }
}

TEST_CASE("snapshot round trips exactly", "[buffer]") {
  ExperienceBuffer buffer;
  buffer.insert(parse_expression("params[0]*x + params[1]", kX), kX, scored(1.0 / 3.0), 1);
  buffer.insert(parse_expression("log(x)", kX), kX, unscored(), 2);
  const std::string snap = buffer.snapshot();
  const ExperienceBuffer back = ExperienceBuffer::restore(snap);
  REQUIRE(back.snapshot() == snap);
  REQUIRE(back.size() == buffer.size());
  REQUIRE(*back.best()->score == 1.0 / 3.0);
}

TEST_CASE("empty buffer snapshots to an empty string", "[buffer]") {
  REQUIRE(ExperienceBuffer{}.snapshot().empty());
  REQUIRE(ExperienceBuffer::restore("").size() == 0);
}

TEST_CASE("corrupted snapshot lines report the line number", "[buffer]") {
  ExperienceBuffer buffer;
  buffer.insert(parse_expression("params[0]*x", kX), kX, scored(0.5), 1);
  std::string snap = buffer.snapshot();
  snap += "{not json\n";
  REQUIRE_THROWS_WITH(ExperienceBuffer::restore(snap),
                      Catch::Matchers::ContainsSubstring("line 2"));
}
