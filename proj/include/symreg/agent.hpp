#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "symreg/buffer.hpp"
#include "symreg/dataset.hpp"
#include "symreg/detail/text.hpp"
#include "symreg/fit.hpp"
#include "symreg/llm.hpp"
#include "symreg/metrics.hpp"
#include "symreg/parser.hpp"
#include "symreg/toolkit.hpp"

namespace symreg {

struct AgentConfig {
  int iterations = 40;                   // N
  int max_turns = 25;                    // M, assistant turns per iteration
  int fetched_k = 5;                     // K, in-context equations
  double initial_goal = 0.001;           // 0.1% MAPE
  double termination_threshold = 1e-6;   // 0.0001% MAPE
  double goal_shrink = 10.0;

  void validate() const {
    if (iterations < 1 || max_turns < 1 || fetched_k < 1)
      throw std::invalid_argument("iterations, max_turns and fetched_k must be >= 1");
    if (!(termination_threshold > 0) || termination_threshold > initial_goal)
      throw std::invalid_argument("need 0 < termination_threshold <= initial_goal");
    if (goal_shrink <= 1) throw std::invalid_argument("goal_shrink must exceed 1");
  }
};

struct TrajectoryStep {
  ChatMessage assistant;                  // carries the tool calls
  std::vector<std::string> observations;  // exactly one per tool call
};

enum class IterationOutcome { FinalAnswer, TurnLimit, LlmError };

struct Trajectory {
  int iteration = 0;
  std::vector<TrajectoryStep> steps;           // tool-bearing turns
  IterationOutcome outcome = IterationOutcome::TurnLimit;
  std::optional<std::string> final_answer_text;  // raw assistant content
  std::optional<std::string> final_equation;     // extracted skeleton, if it parsed
  std::string error;                             // llm_error detail
  int llm_calls = 0;
};

struct SplitReport {
  Metrics metrics;
  std::optional<double> r2;
  std::vector<std::pair<double, std::optional<int>>> acc;  // per tau
};

struct RunResult {
  bool solved = false;
  std::string equation;  // canonical text of the submission
  std::array<double, kMaxParams> params{};
  SplitReport train, test_id, test_ood;
  int iterations_executed = 0;
  long llm_calls = 0;
  ExperienceBuffer buffer;
  std::vector<Trajectory> trajectories;
};

namespace detail {

inline std::string join_descriptions(const std::vector<VariableInfo>& vars) {
  std::vector<std::string> parts;
  for (const auto& v : vars) parts.push_back(v.description.empty() ? v.name : v.description);
  if (parts.size() == 1) return parts[0];
  if (parts.size() == 2) return parts[0] + " and " + parts[1];
  std::string out;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) out += parts[i] + ", ";
  return out + "and " + parts.back();
}

}  // namespace detail

inline std::string system_prompt() {
  return
      "Your goal is to determine the correct equation for the observed data, write it as an "
      "equation skeleton, and optimize it until the mean absolute percentage error is below "
      "the stated goal.\n"
      "You should use the `equation_evaluator` tool to evaluate an equation's goodness of fit "
      "and the `data_analyzer` tool to inspect the data.\n"
      "Equation skeletons are plain text over the named input variables with:\n"
      "- tunable constants written as params[0] .. params[9] (the params list has a fixed "
      "size of 10, MAX_NPARAMS = 10)\n"
      "- operators +, -, *, / and ** for powers\n"
      "- functions sin, cos, tan, exp, log, sqrt, abs, tanh\n"
      "Example: params[0]*x + params[1]*t + params[2]*v + params[3]\n"
      "The `equation_evaluator` optimizes all parameters with the BFGS algorithm starting "
      "from 1.0, minimizing the mean squared error on the observed data, and reports:\n"
      "MSE:{mse:.6e};NMSE:{nmse:.6e};Mean absolute percentage error:{mape:.4%}\n"
      "followed by a Success or Failure line comparing the mean absolute percentage error "
      "with the goal. The mean absolute percentage error is computed over rows with nonzero "
      "output; when the output variance is zero, NMSE is 0 for a zero MSE and infinite "
      "otherwise.\n"
      "The `data_analyzer` commands are: head (print the first rows), stats (per-column "
      "mean/std/min/max/fraction of zeros), correlation (pairwise correlation matrix), and "
      "residuals (fit an equation skeleton, then report its residual statistics, worst rows "
      "and residual-input correlations). In each data row, the first value is the output to "
      "predict, and the rest are the inputs.\n"
      "Submit your final answer by replying with the equation skeleton alone, without any "
      "tool call.";
}

inline std::string user_prompt(const Problem& problem, double goal,
                               const std::vector<BufferEntry>& topk) {
  std::string out = "Find the mathematical function skeleton that represents " +
                    problem.target_description + ", given data on " +
                    detail::join_descriptions(problem.variables) + ".\n\n";
  out += "Variables, in data-column order:\n";
  for (const auto& v : problem.variables)
    out += "- " + v.name + ": " + (v.description.empty() ? v.name : v.description) + "\n";
  out += "\nFollow these steps to solve the problem:\n"
         "1. Implement the equation as a skeleton over the variables above, using elements "
         "of `params` (params[0] .. params[9]) for unknown constants; the `equation_evaluator` "
         "tool optimizes them.\n";
  out += detail::strprintf(
      "2. Test, analyze, and refine. Your goal is to reduce the mean absolute percentage "
      "error to less than %.4f%%. If the goal is not met, refine your equation and use the "
      "`data_analyzer` tool to inspect the data for potential relationships or anomalies.\n",
      goal * 100.0);
  out += "3. Submit your final answer: once you are confident the goal is met, or you "
         "conclude after numerous attempts that you cannot meet it, reply with the equation "
         "skeleton alone, without tool calls.\n";
  if (!topk.empty()) {
    out += "\nPreviously explored equations, best first:\n";
    for (const auto& e : topk)
      out += detail::strprintf("%s \xE2\x80\x94 MAPE: %.4f%%\n", e.canonical_text.c_str(),
                               e.score.value_or(0.0) * 100.0);
  }
  return out;
}

/// Iteration 1 gets no in-context equations; later iterations carry the
/// buffer's top-K as examples.
inline std::vector<ChatMessage> build_prompt(const Problem& problem, double goal,
                                             const std::vector<BufferEntry>& topk) {
  return {ChatMessage::system(system_prompt()), ChatMessage::user(user_prompt(problem, goal, topk))};
}

/// Pull an equation skeleton out of a free-form final answer: the whole
/// text, then fenced code blocks, then individual lines (last first).
inline std::optional<std::string> extract_equation_text(
    const std::string& content, std::span<const std::string> var_names) {
  const auto try_parse = [&](std::string candidate) -> std::optional<std::string> {
    // trim
    const auto first = candidate.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return std::nullopt;
    const auto last = candidate.find_last_not_of(" \t\r\n");
    candidate = candidate.substr(first, last - first + 1);
    try {
      parse_expression(candidate, var_names);
      return candidate;
    } catch (const std::exception&) {
      return std::nullopt;
    }
  };
  if (auto whole = try_parse(content)) return whole;
  // fenced blocks
  std::size_t pos = 0;
  while ((pos = content.find("```", pos)) != std::string::npos) {
    std::size_t body = content.find('\n', pos);
    if (body == std::string::npos) break;
    const std::size_t end = content.find("```", body);
    if (end == std::string::npos) break;
    if (auto block = try_parse(content.substr(body + 1, end - body - 1))) return block;
    pos = end + 3;
  }
  // line by line, last first
  std::vector<std::string> lines;
  std::istringstream stream(content);
  for (std::string line; std::getline(stream, line);) lines.push_back(line);
  for (auto it = lines.rbegin(); it != lines.rend(); ++it)
    if (auto line = try_parse(*it)) return line;
  return std::nullopt;
}

/// One bounded-turn tool-use episode. Every equation evaluation lands in
/// the buffer (scored or not); a final-answer skeleton that was never
/// evaluated is force-evaluated so the buffer stays the single source of
/// truth for submission.
inline Trajectory run_iteration(const Problem& problem, const DataTable& observed,
                                ExperienceBuffer& buffer, double goal, int iteration,
                                LlmClient& client, const AgentConfig& agent_cfg,
                                const FitConfig& fit_cfg = {}) {
  const std::vector<std::string> var_names = problem.variable_names();
  const nlohmann::json schemas = tool_schemas();
  std::vector<ChatMessage> messages =
      build_prompt(problem, goal, iteration > 1 ? buffer.topk(static_cast<std::size_t>(
                                                      agent_cfg.fetched_k))
                                                : std::vector<BufferEntry>{});
  Trajectory traj;
  traj.iteration = iteration;

  for (int turn = 0; turn < agent_cfg.max_turns; ++turn) {
    ChatMessage reply;
    try {
      reply = client.complete(messages, schemas);
      ++traj.llm_calls;
    } catch (const std::exception& e) {
      traj.outcome = IterationOutcome::LlmError;
      traj.error = e.what();
      return traj;
    }

    if (reply.tool_calls.empty()) {
      traj.outcome = IterationOutcome::FinalAnswer;
      traj.final_answer_text = reply.content;
      if (auto text = extract_equation_text(reply.content, var_names)) {
        traj.final_equation = text;
        const Expr expr = parse_expression(*text, var_names);
        if (!buffer.contains(canonical_text(expr, var_names))) {
          const auto eval = evaluate_equation_detailed(*text, observed, var_names, goal, fit_cfg);
          if (eval.parsed && eval.fit) buffer.insert(*eval.parsed, var_names, *eval.fit, iteration);
        }
      }
      return traj;
    }

    messages.push_back(reply);
    TrajectoryStep step;
    step.assistant = reply;
    for (const auto& tc : reply.tool_calls) {
      const auto outcome =
          execute_tool_call(tc.name, tc.arguments, observed, var_names, goal, fit_cfg);
      if (tc.name == kEquationEvaluatorName && outcome.parsed && outcome.fit)
        buffer.insert(*outcome.parsed, var_names, *outcome.fit, iteration);
      step.observations.push_back(outcome.result.observation);
      messages.push_back(ChatMessage::tool(outcome.result.observation, tc.id));
    }
    traj.steps.push_back(std::move(step));
  }
  traj.outcome = IterationOutcome::TurnLimit;
  return traj;
}

/// Shrink the goal once it has been reached, clamped at the termination
/// threshold; otherwise leave it unchanged.
inline double update_goal(const ExperienceBuffer& buffer, double current_goal,
                          const AgentConfig& cfg) {
  const auto best = buffer.best();
  if (best && best->score && *best->score <= current_goal)
    return std::max(*best->score / cfg.goal_shrink, cfg.termination_threshold);
  return current_goal;
}

inline bool stopping_condition(const ExperienceBuffer& buffer, const AgentConfig& cfg) {
  const auto best = buffer.best();
  return best && best->score && *best->score <= cfg.termination_threshold;
}

namespace detail {

inline SplitReport score_split(const Expr& expr, std::span<const double> params,
                               const DataTable& table, std::span<const double> taus) {
  SplitReport report;
  std::vector<double> y(table.rows());
  for (std::size_t i = 0; i < table.rows(); ++i) y[i] = table.y(i);
  const std::vector<double> y_pred = eval_batch(expr, table, params);
  report.metrics = compute_metrics(y, y_pred);
  report.r2 = r_squared(y, y_pred);
  for (double tau : taus) {
    std::optional<int> acc;
    try {
      acc = acc_tolerance(y, y_pred, {tau, 0.05});
    } catch (const std::exception&) {
      acc = std::nullopt;
    }
    report.acc.emplace_back(tau, acc);
  }
  return report;
}

}  // namespace detail

/// Submission rule: the scored buffer entry with the lowest NMSE on the
/// observed table, re-scored from its stored params; ties go to the earlier
/// discovery. Pure in (buffer, table), so re-running the selection over a
/// snapshot picks the same equation.
inline std::optional<BufferEntry> select_submission(const ExperienceBuffer& buffer,
                                                    const DataTable& observed,
                                                    std::span<const std::string> var_names) {
  std::vector<double> y(observed.rows());
  for (std::size_t i = 0; i < observed.rows(); ++i) y[i] = observed.y(i);
  std::optional<std::size_t> chosen;
  double chosen_nmse = 0.0;
  for (std::size_t idx = 0; idx < buffer.entries().size(); ++idx) {
    const BufferEntry& entry = buffer.entries()[idx];
    if (!entry.score) continue;
    Expr expr;
    try {
      expr = parse_expression(entry.canonical_text, var_names);
    } catch (const std::exception&) {
      continue;
    }
    const std::vector<double> y_pred = eval_batch(expr, observed, entry.params);
    const auto score = nmse(y, y_pred);
    if (!score) continue;
    const bool better = !chosen || *score < chosen_nmse ||
                        (*score == chosen_nmse &&
                         entry.sequence < buffer.entries()[*chosen].sequence);
    if (better) {
      chosen = idx;
      chosen_nmse = *score;
    }
  }
  if (!chosen) return std::nullopt;
  return buffer.entries()[*chosen];
}

/// Full goal-scheduled optimization over one problem: iterate episodes,
/// update the goal, stop early once the termination threshold is reached,
/// then submit the buffer entry with the lowest NMSE on the observed table.
inline RunResult run(const Problem& problem, LlmClient& client, const AgentConfig& agent_cfg,
                     const FitConfig& fit_cfg = {},
                     std::vector<double> taus = {0.01, 0.001}) {
  agent_cfg.validate();
  const std::vector<std::string> var_names = problem.variable_names();
  RunResult result;
  double goal = agent_cfg.initial_goal;

  for (int i = 1; i <= agent_cfg.iterations; ++i) {
    Trajectory traj = run_iteration(problem, problem.train, result.buffer, goal, i, client,
                                    agent_cfg, fit_cfg);
    result.llm_calls += traj.llm_calls;
    result.trajectories.push_back(std::move(traj));
    result.iterations_executed = i;
    if (stopping_condition(result.buffer, agent_cfg)) break;
    goal = update_goal(result.buffer, goal, agent_cfg);
  }

  const auto submitted = select_submission(result.buffer, problem.train, var_names);
  if (!submitted) return result;  // explicit no-solution outcome

  result.solved = true;
  result.equation = submitted->canonical_text;
  result.params = submitted->params;
  const Expr expr = parse_expression(submitted->canonical_text, var_names);
  result.train = detail::score_split(expr, submitted->params, problem.train, taus);
  result.test_id = detail::score_split(expr, submitted->params, problem.test_id, taus);
  result.test_ood = detail::score_split(expr, submitted->params, problem.test_ood, taus);
  return result;
}

inline nlohmann::json trajectory_to_json_lines(const Trajectory& traj) {
  nlohmann::json lines = nlohmann::json::array();
  int turn = 1;
  for (const auto& step : traj.steps) {
    nlohmann::json calls = nlohmann::json::array();
    for (const auto& tc : step.assistant.tool_calls)
      calls.push_back({{"id", tc.id}, {"name", tc.name}, {"arguments", tc.arguments}});
    lines.push_back({{"iteration", traj.iteration},
                     {"turn", turn++},
                     {"assistant", step.assistant.content},
                     {"tool_calls", std::move(calls)},
                     {"observations", step.observations}});
  }
  if (traj.final_answer_text) {
    lines.push_back({{"iteration", traj.iteration},
                     {"turn", turn},
                     {"assistant", *traj.final_answer_text},
                     {"tool_calls", nlohmann::json::array()},
                     {"observations", nlohmann::json::array()}});
  }
  return lines;
}

namespace detail {
inline nlohmann::json split_report_json(const SplitReport& r) {
  nlohmann::json j;
  j["mse"] = r.metrics.mse ? nlohmann::json(*r.metrics.mse) : nlohmann::json(nullptr);
  j["nmse"] = r.metrics.nmse ? nlohmann::json(*r.metrics.nmse) : nlohmann::json(nullptr);
  j["mape"] = r.metrics.mape ? nlohmann::json(*r.metrics.mape) : nlohmann::json(nullptr);
  j["r2"] = r.r2 ? nlohmann::json(*r.r2) : nlohmann::json(nullptr);
  nlohmann::json acc = nlohmann::json::object();
  for (const auto& [tau, value] : r.acc)
    acc[symreg::detail::strprintf("%g", tau)] =
        value ? nlohmann::json(*value) : nlohmann::json(nullptr);
  j["acc"] = std::move(acc);
  return j;
}
}  // namespace detail

inline nlohmann::json run_result_to_json(const RunResult& r) {
  nlohmann::json j;
  j["solved"] = r.solved;
  j["equation"] = r.equation;
  j["params"] = r.params;
  j["iterations_executed"] = r.iterations_executed;
  j["llm_calls"] = r.llm_calls;
  if (r.solved) {
    j["train"] = detail::split_report_json(r.train);
    j["test_id"] = detail::split_report_json(r.test_id);
    j["test_ood"] = detail::split_report_json(r.test_ood);
  }
  return j;
}

}  // namespace symreg
