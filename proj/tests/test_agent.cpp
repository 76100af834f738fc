#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "support/stub_server.hpp"
#include "symreg/agent.hpp"

using namespace symreg;

namespace {

DataTable linear_table(int n, double x0) {
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < n; ++i) {
    const double x = x0 + 0.5 * i;
    rows.push_back({2.0 * x + 3.0, x});
  }
  return DataTable::from_rows(rows);
}

Problem linear_problem() {
  Problem p;
  p.id = "LIN";
  p.domain = Domain::Physics;
  p.target_name = "y";
  p.target_description = "Force on a calibrated spring";
  p.variables = {{"x", "Displacement"}};
  p.train = linear_table(40, 0.5);
  p.test_id = linear_table(10, 1.25);
  p.test_ood = linear_table(10, 30.0);
  p.ground_truth = GroundTruth{"params[0]*x + params[1]", {2.0, 3.0}};
  p.validate();
  return p;
}

LlmClient scripted_client(const std::string& policy) {
  LlmConfig cfg;
  cfg.backend = LlmBackend::Scripted;
  cfg.policy = policy;
  return LlmClient(cfg);
}

AgentConfig small_agent() {
  AgentConfig cfg;
  cfg.iterations = 4;
  cfg.max_turns = 6;
  return cfg;
}

}  // namespace

TEST_CASE("iteration one carries no in-context equations", "[agent]") {
  const Problem p = linear_problem();
  const auto messages = build_prompt(p, 0.001, {});
  REQUIRE(messages.size() == 2);
  REQUIRE(messages[0].role == Role::System);
  REQUIRE(messages[1].role == Role::User);
  REQUIRE(messages[1].content.find("Previously explored") == std::string::npos);
  REQUIRE(messages[1].content.find("0.1000%") != std::string::npos);
  REQUIRE(messages[1].content.find("Force on a calibrated spring") != std::string::npos);
}

TEST_CASE("later iterations render the top-k blocks", "[agent]") {
  BufferEntry e;
  e.canonical_text = "params[0]*x";
  e.score = 0.2;
  const Problem p = linear_problem();
  const auto messages = build_prompt(p, 0.001, {e});
  const std::string& user = messages[1].content;
  REQUIRE(user.find("Previously explored equations") != std::string::npos);
  REQUIRE(user.find("params[0]*x \xE2\x80\x94 MAPE: 20.0000%") != std::string::npos);
  // one block per entry, nothing more
  REQUIRE(user.find("MAPE", user.find("MAPE") + 1) == std::string::npos);
}

TEST_CASE("oracle policy produces the expected trajectory", "[agent]") {
  const Problem p = linear_problem();
  ExperienceBuffer buffer;
  LlmClient client = scripted_client("oracle_after_k:3:params[0]*x + params[1]");
  const Trajectory traj =
      run_iteration(p, p.train, buffer, 0.001, 1, client, small_agent());
  REQUIRE(traj.outcome == IterationOutcome::FinalAnswer);
  REQUIRE(traj.steps.size() == 3);  // two data peeks plus one evaluation
  REQUIRE(traj.steps[0].assistant.tool_calls[0].name == "data_analyzer");
  REQUIRE(traj.steps[2].assistant.tool_calls[0].name == "equation_evaluator");
  REQUIRE(traj.steps[2].observations.size() == 1);
  REQUIRE(traj.steps[2].observations[0].find("Success:") != std::string::npos);
  REQUIRE(traj.final_equation.has_value());
  REQUIRE(buffer.size() == 1);
  REQUIRE(buffer.best()->score.value() <= 1e-8);
  REQUIRE(traj.llm_calls == 4);
}

TEST_CASE("a policy that never answers hits the turn limit exactly", "[agent]") {
  const Problem p = linear_problem();
  ExperienceBuffer buffer;
  LlmClient client = scripted_client("head_only");
  const AgentConfig cfg = small_agent();
  const Trajectory traj = run_iteration(p, p.train, buffer, 0.001, 1, client, cfg);
  REQUIRE(traj.outcome == IterationOutcome::TurnLimit);
  REQUIRE(traj.steps.size() == static_cast<std::size_t>(cfg.max_turns));
  REQUIRE(traj.llm_calls == cfg.max_turns);
  REQUIRE(buffer.empty());
}

TEST_CASE("unparseable proposals are recorded in-band and the loop continues", "[agent]") {
  const Problem p = linear_problem();
  ExperienceBuffer buffer;
  LlmClient client = scripted_client("always_invalid");
  const Trajectory traj = run_iteration(p, p.train, buffer, 0.001, 1, client, small_agent());
  REQUIRE(traj.outcome == IterationOutcome::TurnLimit);
  for (const auto& step : traj.steps) {
    REQUIRE(step.observations.size() == 1);
    REQUIRE(step.observations[0].find("Error:") == 0);
  }
  REQUIRE(buffer.empty());
}

TEST_CASE("goal updates shrink only when reached and clamp at termination", "[agent]") {
  AgentConfig cfg;
  ExperienceBuffer buffer;
  REQUIRE(update_goal(buffer, 0.001, cfg) == 0.001);

  FitResult fr;
  fr.metrics.mape = 0.0005;
  buffer.insert(Expr::param(0), std::vector<std::string>{"x"}, fr, 1);
  REQUIRE(update_goal(buffer, 0.001, cfg) == Catch::Approx(0.00005).epsilon(1e-12));
  REQUIRE(update_goal(buffer, 0.0001, cfg) == 0.0001);  // 0.0005 > goal: unchanged

  FitResult better;
  better.metrics.mape = 5e-9;
  buffer.insert(Expr::binary(BinaryOp::Mul, Expr::param(0), Expr::var(0)),
                std::vector<std::string>{"x"}, better, 2);
  REQUIRE(update_goal(buffer, 0.001, cfg) == cfg.termination_threshold);
}

TEST_CASE("stopping condition is a <= test on the best score", "[agent]") {
  AgentConfig cfg;
  ExperienceBuffer buffer;
  REQUIRE_FALSE(stopping_condition(buffer, cfg));
  FitResult at_threshold;
  at_threshold.metrics.mape = cfg.termination_threshold;
  buffer.insert(Expr::param(0), std::vector<std::string>{"x"}, at_threshold, 1);
  REQUIRE(stopping_condition(buffer, cfg));
}

TEST_CASE("run stops early, submits the truth and scores every split", "[agent]") {
  const Problem p = linear_problem();
  LlmClient client = scripted_client("oracle_after_k:2:params[0]*x + params[1]");
  AgentConfig cfg;
  cfg.iterations = 40;
  cfg.max_turns = 25;
  const RunResult result = run(p, client, cfg);
  REQUIRE(result.solved);
  REQUIRE(result.iterations_executed == 1);
  REQUIRE(result.llm_calls <= cfg.iterations * cfg.max_turns);
  REQUIRE(skeleton_equal(parse_expression(result.equation, p.variable_names()),
                         parse_expression(p.ground_truth->skeleton, p.variable_names())));
  REQUIRE(*result.train.metrics.mape <= cfg.termination_threshold);
  for (const SplitReport* split : {&result.train, &result.test_id, &result.test_ood}) {
    REQUIRE(split->acc.size() == 2);
    REQUIRE(split->acc[0].second.value() == 1);
    REQUIRE(split->acc[1].second.value() == 1);
  }
}

TEST_CASE("scripted runs are deterministic end to end", "[agent]") {
  const Problem p = linear_problem();
  AgentConfig cfg = small_agent();
  LlmClient a = scripted_client("poly_ladder");
  LlmClient b = scripted_client("poly_ladder");
  const RunResult ra = run(p, a, cfg);
  const RunResult rb = run(p, b, cfg);
  REQUIRE(run_result_to_json(ra).dump() == run_result_to_json(rb).dump());
  REQUIRE(ra.buffer.snapshot() == rb.buffer.snapshot());
}

TEST_CASE("selection over a snapshot picks the same submission", "[agent]") {
  const Problem p = linear_problem();
  LlmClient client = scripted_client("poly_ladder");
  const RunResult result = run(p, client, small_agent());
  REQUIRE(result.solved);
  const ExperienceBuffer restored = ExperienceBuffer::restore(result.buffer.snapshot());
  const auto again = select_submission(restored, p.train, p.variable_names());
  REQUIRE(again.has_value());
  REQUIRE(again->canonical_text == result.equation);
  REQUIRE(again->params == result.params);
}

TEST_CASE("a run with no scored equation reports no solution", "[agent]") {
  const Problem p = linear_problem();
  LlmClient client = scripted_client("always_invalid");
  AgentConfig cfg;
  cfg.iterations = 2;
  cfg.max_turns = 3;
  const RunResult result = run(p, client, cfg);
  REQUIRE_FALSE(result.solved);
  REQUIRE(result.equation.empty());
  REQUIRE(result.iterations_executed == 2);
}

TEST_CASE("final answers are force-evaluated into the buffer", "[agent]") {
  const Problem p = linear_problem();
  ExperienceBuffer buffer;
  // canned policy answers immediately without ever calling a tool
  LlmClient client = scripted_client("canned:params[0]*x + params[1]");
  const Trajectory traj = run_iteration(p, p.train, buffer, 0.001, 1, client, small_agent());
  REQUIRE(traj.outcome == IterationOutcome::FinalAnswer);
  REQUIRE(traj.steps.empty());
  REQUIRE(buffer.size() == 1);
  REQUIRE(buffer.best()->score.value() <= 1e-8);
}

TEST_CASE("buffer best score never degrades across iterations", "[agent]") {
  const Problem p = linear_problem();
  LlmClient client = scripted_client("poly_ladder");
  AgentConfig cfg = small_agent();
  ExperienceBuffer buffer;
  double goal = cfg.initial_goal;
  std::optional<double> previous;
  for (int i = 1; i <= cfg.iterations; ++i) {
    run_iteration(p, p.train, buffer, goal, i, client, cfg);
    const auto best = buffer.best();
    if (previous && best) REQUIRE(*best->score <= *previous);
    if (best) previous = best->score;
    goal = update_goal(buffer, goal, cfg);
    REQUIRE(goal <= cfg.initial_goal);
  }
}

TEST_CASE("trajectory JSONL lines carry the step schema", "[agent]") {
  const Problem p = linear_problem();
  ExperienceBuffer buffer;
  LlmClient client = scripted_client("oracle_after_k:2:params[0]*x + params[1]");
  const Trajectory traj = run_iteration(p, p.train, buffer, 0.001, 3, client, small_agent());
  const nlohmann::json lines = trajectory_to_json_lines(traj);
  REQUIRE(lines.size() == traj.steps.size() + 1);  // tool steps plus the final answer
  for (const auto& line : lines) {
    REQUIRE(line.contains("iteration"));
    REQUIRE(line["iteration"] == 3);
    REQUIRE(line.contains("turn"));
    REQUIRE(line.contains("assistant"));
    REQUIRE(line.contains("tool_calls"));
    REQUIRE(line.contains("observations"));
  }
  REQUIRE(lines.back()["tool_calls"].empty());
}

TEST_CASE("remote runs record transcripts that replay byte-for-byte", "[agent]") {
  namespace fs = std::filesystem;
  const fs::path transcript = fs::temp_directory_path() / "symreg_agent_replay.jsonl";
  fs::remove(transcript);
  const Problem p = linear_problem();

  testing::StubServer stub;
  stub.enqueue_tool_call("call_a", "data_analyzer", {{"command", "stats"}});
  stub.enqueue_tool_call("call_b", "equation_evaluator",
                         {{"equation", "params[0]*x + params[1]"}});
  stub.enqueue_assistant("params[0]*x + params[1]");

  AgentConfig cfg;
  cfg.iterations = 1;
  cfg.max_turns = 5;
  LlmConfig llm;
  llm.backend = LlmBackend::Remote;
  llm.endpoint = stub.endpoint();
  llm.model = "stub";
  llm.retry_backoff_ms = 1;
  llm.record_path = transcript.string();

  LlmClient recorder(llm);
  const RunResult live = run(p, recorder, cfg);
  REQUIRE(live.solved);
  REQUIRE(live.llm_calls == 3);

  LlmConfig replay_cfg = llm;
  replay_cfg.record_path.clear();
  replay_cfg.replay_path = transcript.string();
  LlmClient replayer(replay_cfg);
  const RunResult replayed = run(p, replayer, cfg);

  nlohmann::json live_lines = nlohmann::json::array();
  nlohmann::json replay_lines = nlohmann::json::array();
  for (const auto& t : live.trajectories)
    for (const auto& line : trajectory_to_json_lines(t)) live_lines.push_back(line);
  for (const auto& t : replayed.trajectories)
    for (const auto& line : trajectory_to_json_lines(t)) replay_lines.push_back(line);
  REQUIRE(live_lines.dump() == replay_lines.dump());
  REQUIRE(run_result_to_json(live).dump() == run_result_to_json(replayed).dump());
  fs::remove(transcript);
}

TEST_CASE("equation extraction digs through prose and fences", "[agent]") {
  const std::vector<std::string> vars{"x"};
  REQUIRE(*extract_equation_text("params[0]*x", vars) == "params[0]*x");
  REQUIRE(*extract_equation_text("  params[0]*x \n", vars) == "params[0]*x");
  const std::string fenced = "The answer is:\n```\nparams[0]*sin(x)\n```\nDone.";
  REQUIRE(*extract_equation_text(fenced, vars) == "params[0]*sin(x)");
  const std::string lines = "I conclude.\nparams[0]*x + params[1]";
  REQUIRE(*extract_equation_text(lines, vars) == "params[0]*x + params[1]");
  REQUIRE_FALSE(extract_equation_text("no equation here!", vars).has_value());
}
