#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "symreg/synth.hpp"

using namespace symreg;

namespace {
SkeletonSpec load_fixture(const std::string& name) {
  return load_skeleton_spec(std::string(SYMREG_TEST_DIR) + "/fixtures/specs/" + name);
}
}  // namespace

TEST_CASE("1-D grids hit both endpoints", "[synth]") {
  const std::vector<std::string> vars{"x"};
  const Expr truth = parse_expression("2*x", vars);
  const auto rows = sample_static_grid(truth, {{0.0, 1.0}}, {3});
  REQUIRE(rows.size() == 3);
  REQUIRE(rows[0][1] == 0.0);
  REQUIRE(rows[1][1] == 0.5);
  REQUIRE(rows[2][1] == 1.0);
  REQUIRE(rows[2][0] == 2.0);
}

TEST_CASE("default 2-D grids use the most-square factorization of 5000", "[synth]") {
  const std::vector<std::string> vars{"T", "eps"};
  const Expr truth = parse_expression("T + eps", vars);
  const auto rows = sample_static_grid(truth, {{273.0, 573.0}, {0.0, 0.6}});
  REQUIRE(rows.size() == 5000);
  std::set<double> t_values, eps_values;
  for (const auto& row : rows) {
    REQUIRE(row[1] >= 273.0);
    REQUIRE(row[1] <= 573.0);
    t_values.insert(row[1]);
    eps_values.insert(row[2]);
  }
  REQUIRE(t_values.size() == 50);
  REQUIRE(eps_values.size() == 100);
}

TEST_CASE("constant expressions produce constant targets", "[synth]") {
  const std::vector<std::string> vars{"x"};
  const auto rows = sample_static_grid(parse_expression("7", vars), {{0.0, 1.0}}, {5});
  for (const auto& row : rows) REQUIRE(row[0] == 7.0);
  REQUIRE(filter_anomalous(rows).has_value());  // degenerate target rejected
}

TEST_CASE("splits have exact sizes and respect the key boundary", "[synth]") {
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 5000; ++i)
    rows.push_back({static_cast<double>(i % 17), static_cast<double>(i), 0.5});
  const DataTable table = DataTable::from_rows(rows);
  const SplitSet s = make_splits(table, 1, 42);
  REQUIRE(s.train.rows() == 4000);
  REQUIRE(s.test_id.rows() == 500);
  REQUIRE(s.test_ood.rows() == 500);
  double min_ood = 1e300;
  for (std::size_t i = 0; i < s.test_ood.rows(); ++i)
    min_ood = std::min(min_ood, s.test_ood.x(i, 0));
  for (std::size_t i = 0; i < s.train.rows(); ++i) REQUIRE(s.train.x(i, 0) <= min_ood);
  for (std::size_t i = 0; i < s.test_id.rows(); ++i) REQUIRE(s.test_id.x(i, 0) <= min_ood);
  REQUIRE(min_ood == 4500.0);
}

TEST_CASE("splits partition the table exactly", "[synth]") {
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 200; ++i)
    rows.push_back({std::sin(0.1 * i), static_cast<double>(i % 31), static_cast<double>(i)});
  const DataTable table = DataTable::from_rows(rows);
  const SplitSet s = make_splits(table, 2, 7);
  REQUIRE(s.train.rows() + s.test_id.rows() + s.test_ood.rows() == table.rows());
  std::multiset<std::string> original, recombined;
  for (std::size_t i = 0; i < table.rows(); ++i) {
    std::string key;
    for (double v : table.row(i)) key += std::to_string(v) + "|";
    original.insert(key);
  }
  for (const DataTable* part : {&s.train, &s.test_id, &s.test_ood})
    for (std::size_t i = 0; i < part->rows(); ++i) {
      std::string key;
      for (double v : part->row(i)) key += std::to_string(v) + "|";
      recombined.insert(key);
    }
  REQUIRE(original == recombined);
}

TEST_CASE("splits are deterministic in the seed", "[synth]") {
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 300; ++i) rows.push_back({1.0 * i, static_cast<double>(i)});
  const DataTable table = DataTable::from_rows(rows);
  const SplitSet a = make_splits(table, 1, 5);
  const SplitSet b = make_splits(table, 1, 5);
  REQUIRE(serialize_table(a.train) == serialize_table(b.train));
  const SplitSet c = make_splits(table, 1, 6);
  REQUIRE(serialize_table(a.train) != serialize_table(c.train));
}

TEST_CASE("filter rules: non-finite, magnitude, degenerate", "[synth]") {
  REQUIRE_FALSE(filter_anomalous({{1.0, 2.0}, {2.0, 3.0}}).has_value());
  const auto nonfinite = filter_anomalous({{1.0, 2.0}, {std::nan(""), 3.0}});
  REQUIRE(nonfinite.has_value());
  REQUIRE(nonfinite->find("row 1") != std::string::npos);
  REQUIRE(filter_anomalous({{1e9, 2.0}, {1.0, 3.0}}).has_value());
  REQUIRE(filter_anomalous({{5.0, 1.0}, {5.0, 2.0}}).has_value());
}

TEST_CASE("static synthesis produces a full problem with ground truth", "[synth]") {
  const SkeletonSpec spec = load_fixture("ms01_thermal_stress.json");
  const SynthesisOutcome outcome = synthesize_problem(spec, 11);
  REQUIRE(outcome.accepted);
  const Problem& p = outcome.problem;
  REQUIRE(p.train.rows() == 4000);
  REQUIRE(p.test_id.rows() == 500);
  REQUIRE(p.test_ood.rows() == 500);
  REQUIRE(p.variables.size() == 2);
  REQUIRE(p.variables[0].name == "T");
  REQUIRE(p.ground_truth.has_value());
  REQUIRE(p.ground_truth->skeleton == "params[0]*T*eps + params[1]*T");
  REQUIRE(p.ground_truth->params[0] == 2.5);
  REQUIRE(p.ground_truth->params[1] == 0.004);
  // OOD holds the top temperatures
  double max_train_t = 0.0;
  for (std::size_t i = 0; i < p.train.rows(); ++i)
    max_train_t = std::max(max_train_t, p.train.x(i, 0));
  for (std::size_t i = 0; i < p.test_ood.rows(); ++i)
    REQUIRE(p.test_ood.x(i, 0) >= max_train_t);
}

TEST_CASE("dynamic synthesis tabulates the target derivative", "[synth]") {
  const SkeletonSpec spec = load_fixture("ph01_cubic_oscillator.json");
  const SynthesisOutcome outcome = synthesize_problem(spec, 11);
  REQUIRE(outcome.accepted);
  const Problem& p = outcome.problem;
  REQUIRE(p.variables.size() == 3);
  REQUIRE(p.variables[0].name == "x");
  REQUIRE(p.variables[1].name == "t");
  REQUIRE(p.variables[2].name == "v");
  REQUIRE(p.ground_truth->skeleton == "-params[0]*x - params[1]*v**3");
  // every row satisfies a = -4 x - 0.1 v^3 by construction
  for (std::size_t i = 0; i < p.test_id.rows(); ++i) {
    const double a = p.test_id.y(i), x = p.test_id.x(i, 0), v = p.test_id.x(i, 2);
    REQUIRE(a == Catch::Approx(-4.0 * x - 0.1 * v * v * v).margin(1e-12));
  }
  // OOD is the tail of the time axis
  double max_train_time = 0.0;
  for (std::size_t i = 0; i < p.train.rows(); ++i)
    max_train_time = std::max(max_train_time, p.train.x(i, 1));
  for (std::size_t i = 0; i < p.test_ood.rows(); ++i)
    REQUIRE(p.test_ood.x(i, 1) >= max_train_time);
}

TEST_CASE("a blow-up system is rejected with a reason", "[synth]") {
  const SkeletonSpec spec = load_fixture("xx99_blowup.json");
  const SynthesisOutcome outcome = synthesize_problem(spec, 11);
  REQUIRE_FALSE(outcome.accepted);
  REQUIRE(outcome.reason.find("integration failed") != std::string::npos);
}

TEST_CASE("spec validation rejects malformed inputs", "[synth]") {
  nlohmann::json j = {{"id", "B1"},
                      {"domain", "physics"},
                      {"target_name", "y"},
                      {"target_description", "d"},
                      {"mode", "static"},
                      {"term_count", 7},
                      {"expression", "c0*x"},
                      {"constants", nlohmann::json::array({{{"name", "c0"}, {"value", 1.0}}})},
                      {"variables",
                       nlohmann::json::array({{{"name", "x"}, {"range", {0.0, 1.0}}}})}};
  REQUIRE_THROWS_WITH(skeleton_spec_from_json(j),
                      Catch::Matchers::ContainsSubstring("term count"));
  j["term_count"] = 2;
  REQUIRE_NOTHROW(skeleton_spec_from_json(j));
  j["mode"] = "sideways";
  REQUIRE_THROWS_AS(skeleton_spec_from_json(j), SynthError);
}

TEST_CASE("skeleton generation parses scripted replies", "[synth]") {
  const std::string payload = R"([{
    "id": "GEN1", "domain": "biology", "target_name": "g",
    "target_description": "Growth rate", "mode": "static", "term_count": 2,
    "expression": "c0*p + c1*p*p",
    "constants": [{"name": "c0", "value": 0.4, "rationale": "linear growth"},
                   {"name": "c1", "value": -0.01, "rationale": "crowding"}],
    "variables": [{"name": "p", "description": "Population", "range": [1.0, 100.0]}]
  }])";
  LlmConfig cfg;
  cfg.backend = LlmBackend::Scripted;
  cfg.policy = "canned:" + payload;
  LlmClient client(cfg);
  const auto specs = generate_skeletons(Domain::Biology, client);
  REQUIRE(specs.size() == 1);
  REQUIRE(specs[0].id == "GEN1");
  REQUIRE(specs[0].constants.size() == 2);

  LlmConfig prose_cfg;
  prose_cfg.backend = LlmBackend::Scripted;
  prose_cfg.policy = "canned:I would rather describe them in words.";
  LlmClient prose(prose_cfg);
  REQUIRE_THROWS_AS(generate_skeletons(Domain::Biology, prose), SynthError);

  LlmConfig empty_cfg;
  empty_cfg.backend = LlmBackend::Scripted;
  empty_cfg.policy = "canned:[]";
  LlmClient empty(empty_cfg);
  REQUIRE_THROWS_AS(generate_skeletons(Domain::Biology, empty), SynthError);
}
