#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "symreg/dataset.hpp"
#include "symreg/detail/text.hpp"
#include "symreg/fit.hpp"
#include "symreg/parser.hpp"

namespace symreg {

inline constexpr const char* kEquationEvaluatorName = "equation_evaluator";
inline constexpr const char* kDataAnalyzerName = "data_analyzer";

/// What the agent sees. Failures are reported in-band: is_error results
/// carry a diagnostic observation and no structured payload.
struct ToolResult {
  std::string observation;
  std::optional<FitResult> fit;
  std::optional<StatsSummary> stats;
  bool is_error = false;
};

/// evaluate_equation plus the pieces the orchestration layer needs for
/// buffer bookkeeping (present whenever the text parsed).
struct EvaluationOutcome {
  ToolResult result;
  std::optional<Expr> parsed;
  std::optional<FitResult> fit;
};

namespace detail {

inline std::string metrics_line(const Metrics& m) {
  // mirrors the evaluator code: an all-zero-target table reports 0 MAPE
  const double mape_value = m.mape.value_or(0.0);
  return strprintf("MSE:%.6e;NMSE:%.6e;Mean absolute percentage error:%.4f%%",
                   m.mse.value_or(std::nan("")), m.nmse.value_or(std::nan("")),
                   mape_value * 100.0);
}

inline std::string goal_line(const Metrics& m, double goal) {
  const double mape_value = m.mape.value_or(0.0);
  if (mape_value < goal)
    return strprintf("Success: The mean absolute percentage error is smaller than %.4f%%",
                     goal * 100.0);
  return strprintf("Failure: The mean absolute percentage error is larger than %.4f%%",
                   goal * 100.0);
}

}  // namespace detail

/// Parse, fit and score an equation skeleton. Observation bytes are
/// deterministic in (text, table, goal).
inline EvaluationOutcome evaluate_equation_detailed(const std::string& text,
                                                    const DataTable& table,
                                                    std::span<const std::string> var_names,
                                                    double goal, const FitConfig& cfg = {}) {
  EvaluationOutcome out;
  Expr expr;
  try {
    expr = parse_expression(text, var_names);
  } catch (const std::exception& e) {
    out.result = {std::string("Error: ") + e.what(), std::nullopt, std::nullopt, true};
    return out;
  }
  out.parsed = expr;
  FitResult fit;
  try {
    fit = fit_constants(expr, table, goal, cfg);
  } catch (const std::exception& e) {
    out.result = {std::string("Error: ") + e.what(), std::nullopt, std::nullopt, true};
    return out;
  }
  out.fit = fit;
  if (!fit.metrics.mse) {
    out.result = {"Error: evaluation produced non-finite values (" +
                      fit.failure_reason.value_or("NaN/Inf objective") + ")",
                  std::nullopt, std::nullopt, true};
    return out;
  }
  out.result.observation =
      detail::metrics_line(fit.metrics) + "\n" + detail::goal_line(fit.metrics, goal);
  out.result.fit = fit;
  return out;
}

inline ToolResult evaluate_equation(const std::string& text, const DataTable& table,
                                    std::span<const std::string> var_names, double goal,
                                    const FitConfig& cfg = {}) {
  return evaluate_equation_detailed(text, table, var_names, goal, cfg).result;
}

struct AnalyzeCommand {
  enum class Kind { Head, Stats, Correlation, Residuals };
  Kind kind = Kind::Head;
  int head_count = 5;
  std::vector<std::string> columns;  // Stats subset; empty means all
  std::string equation;              // Residuals
};

namespace detail {

inline std::vector<std::string> column_labels(std::span<const std::string> var_names) {
  std::vector<std::string> labels{"y"};
  labels.insert(labels.end(), var_names.begin(), var_names.end());
  return labels;
}

inline std::string render_head(const AnalyzeCommand& cmd, const DataTable& table,
                               std::span<const std::string> var_names) {
  const auto labels = column_labels(var_names);
  const std::size_t n = std::min<std::size_t>(
      table.rows(), static_cast<std::size_t>(std::max(cmd.head_count, 0)));
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    out += "row " + std::to_string(i) + ":";
    for (std::size_t c = 0; c < labels.size(); ++c) {
      out += c == 0 ? " " : ", ";
      out += labels[c] + "=" + strprintf("%.6f", table.at(i, c));
    }
    out += '\n';
  }
  return out;
}

inline std::string render_stats(const AnalyzeCommand& cmd, const StatsSummary& stats,
                                std::span<const std::string> var_names) {
  const auto labels = column_labels(var_names);
  std::vector<std::size_t> selected;
  if (cmd.columns.empty()) {
    for (std::size_t c = 0; c < labels.size(); ++c) selected.push_back(c);
  } else {
    for (const auto& name : cmd.columns) {
      const auto it = std::find(labels.begin(), labels.end(), name);
      if (it == labels.end()) throw std::invalid_argument("unknown column '" + name + "'");
      selected.push_back(static_cast<std::size_t>(it - labels.begin()));
    }
  }
  std::string out;
  for (std::size_t c : selected) {
    const ColumnStats& s = stats.columns[c];
    out += strprintf("column %s: mean=%.6g, std=%.6g, min=%.6g, max=%.6g, fraction_zero=%.6g\n",
                     labels[c].c_str(), s.mean, s.stddev, s.min, s.max, s.fraction_zero);
  }
  return out;
}

inline std::string render_correlation(const StatsSummary& stats,
                                      std::span<const std::string> var_names) {
  const auto labels = column_labels(var_names);
  std::string out = "correlation (columns: ";
  for (std::size_t c = 0; c < labels.size(); ++c) {
    if (c) out += ", ";
    out += labels[c];
  }
  out += "):\n";
  for (std::size_t a = 0; a < labels.size(); ++a) {
    out += labels[a] + ":";
    for (std::size_t b = 0; b < labels.size(); ++b)
      out += strprintf(" %.4f", stats.corr(a, b));
    out += '\n';
  }
  return out;
}

inline std::string render_residuals(const AnalyzeCommand& cmd, const DataTable& table,
                                    std::span<const std::string> var_names,
                                    const FitConfig& cfg) {
  const Expr expr = parse_expression(cmd.equation, var_names);
  const FitResult fit = fit_constants(expr, table, 1e-3, cfg);
  if (!fit.metrics.mse)
    throw std::runtime_error("evaluation produced non-finite values (" +
                             fit.failure_reason.value_or("NaN/Inf objective") + ")");

  const std::size_t n = table.rows();
  std::vector<double> residual(n);
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    residual[i] = table.y(i) - eval_row(expr, table.inputs(i), fit.params);
    mean += residual[i];
  }
  mean /= static_cast<double>(n);
  double var = 0.0, max_abs = 0.0, norm = 0.0;
  for (double r : residual) {
    var += (r - mean) * (r - mean);
    max_abs = std::max(max_abs, std::abs(r));
    norm += r * r;
  }
  var /= static_cast<double>(n);
  norm = std::sqrt(norm);

  std::string out = "residuals of " + cmd.equation + " after constant fitting:\n";
  out += strprintf("mean=%.6e, std=%.6e, max|residual|=%.6e\n", mean, std::sqrt(var), max_abs);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(residual[a]) > std::abs(residual[b]);
  });
  out += "worst rows by |residual|:\n";
  for (std::size_t k = 0; k < std::min<std::size_t>(5, n); ++k) {
    const std::size_t i = order[k];
    out += strprintf("row %zu: y=%.6g, pred=%.6g, residual=%.6g\n", i, table.y(i),
                     table.y(i) - residual[i], residual[i]);
  }

  // fitted residuals are orthogonal to the regressors in the uncentered
  // sense, so alignment is reported as the uncentered cosine
  out += "correlation of residuals with inputs:\n";
  for (int j = 0; j < table.dim(); ++j) {
    double dot = 0.0, xnorm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double xv = table.x(i, static_cast<std::size_t>(j));
      dot += residual[i] * xv;
      xnorm += xv * xv;
    }
    xnorm = std::sqrt(xnorm);
    const double denom = norm * xnorm;
    const double corr = denom > 0 ? dot / denom : 0.0;
    out += strprintf("corr(residual, %s)=%.4f\n", var_names[static_cast<std::size_t>(j)].c_str(),
                     corr);
  }
  return out;
}

}  // namespace detail

/// Typed data-analysis commands covering data print, data statistics and
/// residual error analysis. All failures are in-band diagnostics.
inline ToolResult analyze_data(const AnalyzeCommand& cmd, const DataTable& table,
                               std::span<const std::string> var_names,
                               const FitConfig& cfg = {}) {
  try {
    switch (cmd.kind) {
      case AnalyzeCommand::Kind::Head:
        return {detail::render_head(cmd, table, var_names), std::nullopt, std::nullopt, false};
      case AnalyzeCommand::Kind::Stats: {
        const StatsSummary stats = column_stats(table);
        return {detail::render_stats(cmd, stats, var_names), std::nullopt, stats, false};
      }
      case AnalyzeCommand::Kind::Correlation: {
        const StatsSummary stats = column_stats(table);
        return {detail::render_correlation(stats, var_names), std::nullopt, stats, false};
      }
      case AnalyzeCommand::Kind::Residuals:
        return {detail::render_residuals(cmd, table, var_names, cfg), std::nullopt, std::nullopt,
                false};
    }
  } catch (const std::exception& e) {
    return {std::string("Error: ") + e.what(), std::nullopt, std::nullopt, true};
  }
  return {"Error: unknown command", std::nullopt, std::nullopt, true};
}

/// Machine-readable tool descriptors in chat-completions "tools" shape.
inline nlohmann::json tool_schemas() {
  nlohmann::json tools = nlohmann::json::array();
  tools.push_back({
      {"type", "function"},
      {"function",
       {{"name", kEquationEvaluatorName},
        {"description",
         "Fit the constants of an equation skeleton to the observed data with BFGS "
         "(minimizing the mean squared error) and report MSE, NMSE and the mean absolute "
         "percentage error against the current goal. Write the skeleton over the named "
         "variables with tunable constants params[0]..params[9]."},
        {"parameters",
         {{"type", "object"},
          {"properties",
           {{"equation",
             {{"type", "string"},
              {"description", "Equation skeleton, e.g. params[0]*x + params[1]"}}}}},
          {"required", nlohmann::json::array({"equation"})}}}}},
  });
  tools.push_back({
      {"type", "function"},
      {"function",
       {{"name", kDataAnalyzerName},
        {"description",
         "Inspect the observed data. Commands: head (print the first rows), stats "
         "(per-column mean/std/min/max/fraction of zeros), correlation (pairwise "
         "correlation matrix), residuals (fit an equation skeleton, then analyze its "
         "residuals). The first column y is the output to predict; the rest are inputs."},
        {"parameters",
         {{"type", "object"},
          {"properties",
           {{"command",
             {{"type", "string"},
              {"enum", nlohmann::json::array({"head", "stats", "correlation", "residuals"})}}},
            {"n", {{"type", "integer"}, {"description", "head: number of rows (default 5)"}}},
            {"columns",
             {{"type", "array"},
              {"items", {{"type", "string"}}},
              {"description", "stats: column subset, e.g. [\"y\", \"x\"]"}}},
            {"equation",
             {{"type", "string"}, {"description", "residuals: equation skeleton to fit"}}}}},
          {"required", nlohmann::json::array({"command"})}}}}},
  });
  return tools;
}

/// Decode data_analyzer tool-call arguments.
inline AnalyzeCommand parse_analyze_arguments(const nlohmann::json& args) {
  AnalyzeCommand cmd;
  const std::string command = args.at("command").get<std::string>();
  if (command == "head") {
    cmd.kind = AnalyzeCommand::Kind::Head;
    cmd.head_count = args.value("n", 5);
  } else if (command == "stats") {
    cmd.kind = AnalyzeCommand::Kind::Stats;
    if (args.contains("columns"))
      for (const auto& c : args["columns"]) cmd.columns.push_back(c.get<std::string>());
  } else if (command == "correlation") {
    cmd.kind = AnalyzeCommand::Kind::Correlation;
  } else if (command == "residuals") {
    cmd.kind = AnalyzeCommand::Kind::Residuals;
    cmd.equation = args.at("equation").get<std::string>();
  } else {
    throw std::invalid_argument("unknown data_analyzer command '" + command + "'");
  }
  return cmd;
}

/// Execute one named tool call with JSON-string arguments; never throws.
inline EvaluationOutcome execute_tool_call(const std::string& tool_name,
                                           const std::string& arguments_json,
                                           const DataTable& table,
                                           std::span<const std::string> var_names, double goal,
                                           const FitConfig& cfg = {}) {
  nlohmann::json args;
  try {
    args = nlohmann::json::parse(arguments_json);
  } catch (const std::exception& e) {
    EvaluationOutcome out;
    out.result = {std::string("Error: malformed tool arguments: ") + e.what(), std::nullopt,
                  std::nullopt, true};
    return out;
  }
  try {
    if (tool_name == kEquationEvaluatorName) {
      return evaluate_equation_detailed(args.at("equation").get<std::string>(), table, var_names,
                                        goal, cfg);
    }
    if (tool_name == kDataAnalyzerName) {
      EvaluationOutcome out;
      out.result = analyze_data(parse_analyze_arguments(args), table, var_names, cfg);
      return out;
    }
    EvaluationOutcome out;
    out.result = {"Error: unknown tool '" + tool_name + "'", std::nullopt, std::nullopt, true};
    return out;
  } catch (const std::exception& e) {
    EvaluationOutcome out;
    out.result = {std::string("Error: ") + e.what(), std::nullopt, std::nullopt, true};
    return out;
  }
}

}  // namespace symreg
