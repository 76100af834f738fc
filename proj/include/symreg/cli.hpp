#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "symreg/agent.hpp"
#include "symreg/dataset.hpp"
#include "symreg/detail/text.hpp"
#include "symreg/synth.hpp"

namespace symreg {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ProblemRef {
  std::string path;
  std::string policy;  // optional per-problem scripted policy override
};

struct RunManifest {
  std::vector<ProblemRef> problems;
  std::string output_dir = "out";
  AgentConfig agent;
  FitConfig fit;
  LlmConfig llm;
  int parallelism = 1;
  int repeats = 1;
  std::uint64_t seed = 0;
  std::vector<double> taus = {0.01, 0.001};
  double noise_sigma = 0.0;

  void validate() const {
    if (problems.empty()) throw ConfigError("manifest lists no problems");
    if (parallelism < 1) throw ConfigError("parallelism must be >= 1");
    if (repeats < 1) throw ConfigError("repeats must be >= 1");
    if (noise_sigma < 0) throw ConfigError("noise sigma must be nonnegative");
    for (double tau : taus)
      if (!(tau > 0)) throw ConfigError("tau values must be positive");
    agent.validate();
    for (const auto& p : problems)
      if (!std::filesystem::exists(p.path))
        throw ConfigError("problem manifest not found: " + p.path);
  }
};

inline RunManifest load_run_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open run manifest " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("run manifest " + path.string() + ": " + e.what());
  }
  RunManifest m;
  const auto base = path.parent_path();
  try {
    for (const auto& p : j.at("problems")) {
      ProblemRef ref;
      if (p.is_string()) {
        ref.path = (base / p.get<std::string>()).string();
      } else {
        ref.path = (base / p.at("path").get<std::string>()).string();
        ref.policy = p.value("policy", std::string{});
      }
      m.problems.push_back(std::move(ref));
    }
    m.output_dir = j.value("output_dir", std::string{"out"});
    if (j.contains("agent")) {
      const auto& a = j["agent"];
      m.agent.iterations = a.value("iterations", m.agent.iterations);
      m.agent.max_turns = a.value("max_turns", m.agent.max_turns);
      m.agent.fetched_k = a.value("fetched_k", m.agent.fetched_k);
      m.agent.initial_goal = a.value("initial_goal", m.agent.initial_goal);
      m.agent.termination_threshold =
          a.value("termination_threshold", m.agent.termination_threshold);
      m.agent.goal_shrink = a.value("goal_shrink", m.agent.goal_shrink);
    }
    if (j.contains("fit")) {
      const auto& f = j["fit"];
      m.fit.max_iterations = f.value("max_iterations", m.fit.max_iterations);
      m.fit.gradient_tolerance = f.value("gradient_tolerance", m.fit.gradient_tolerance);
      m.fit.param_init = f.value("param_init", m.fit.param_init);
      m.fit.random_restarts = f.value("random_restarts", m.fit.random_restarts);
      m.fit.restart_seed = f.value("restart_seed", m.fit.restart_seed);
    }
    if (j.contains("llm")) {
      const auto& l = j["llm"];
      const std::string backend = l.value("backend", std::string{"scripted"});
      if (backend == "scripted")
        m.llm.backend = LlmBackend::Scripted;
      else if (backend == "remote")
        m.llm.backend = LlmBackend::Remote;
      else
        throw ConfigError("unknown llm backend '" + backend + "'");
      m.llm.policy = l.value("policy", m.llm.policy);
      m.llm.endpoint = l.value("endpoint", m.llm.endpoint);
      m.llm.model = l.value("model", m.llm.model);
      m.llm.credential_env = l.value("credential_env", m.llm.credential_env);
      m.llm.temperature = l.value("temperature", m.llm.temperature);
      m.llm.max_completion_tokens =
          l.value("max_completion_tokens", m.llm.max_completion_tokens);
      m.llm.timeout_seconds = l.value("timeout_seconds", m.llm.timeout_seconds);
      m.llm.retry_attempts = l.value("retry_attempts", m.llm.retry_attempts);
      m.llm.replay_path = l.value("replay_path", m.llm.replay_path);
    }
    m.parallelism = j.value("parallelism", 1);
    m.repeats = j.value("repeats", 1);
    m.seed = j.value("seed", static_cast<std::uint64_t>(0));
    if (j.contains("taus")) {
      m.taus.clear();
      for (const auto& t : j["taus"]) m.taus.push_back(t.get<double>());
    }
    m.noise_sigma = j.value("noise_sigma", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("run manifest " + path.string() + ": " + e.what());
  }
  return m;
}

namespace detail {

inline void parallel_for(std::size_t count, int workers,
                         const std::function<void(std::size_t)>& fn) {
  const int pool = std::max(1, std::min<int>(workers, static_cast<int>(count)));
  if (pool == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(pool));
  for (int w = 0; w < pool; ++w) {
    threads.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        fn(i);
      }
    });
  }
  for (auto& t : threads) t.join();
}

struct SummaryRow {
  std::string problem;
  bool infra_error = false;
  std::string error;
  std::optional<RunResult> result;
};

inline std::string csv_cell(const std::optional<double>& v) {
  if (!v || !std::isfinite(*v)) return v && std::isinf(*v) ? "inf" : "";
  return strprintf("%.10g", *v);
}

inline std::string summary_header(std::span<const double> taus) {
  std::string h = "problem,solved,iterations,llm_calls,train_mape,train_nmse";
  for (const char* split : {"id", "ood"}) {
    h += std::string(",") + split + "_mape," + split + "_nmse";
    for (double tau : taus) h += strprintf(",%s_acc_%g", split, tau);
  }
  return h;
}

inline std::string summary_row_csv(const SummaryRow& row, std::span<const double> taus) {
  std::string line = row.problem;
  if (row.infra_error || !row.result) {
    line += ",error";
    // pad to the full column count: iterations, llm_calls, train pair,
    // then (mape, nmse, taus...) per test split
    const std::size_t remaining = 2 + 2 + 2 * (2 + taus.size());
    for (std::size_t i = 0; i < remaining; ++i) line += ',';
    return line;
  }
  const RunResult& r = *row.result;
  line += r.solved ? ",1" : ",0";
  line += strprintf(",%d,%ld", r.iterations_executed, r.llm_calls);
  line += "," + csv_cell(r.train.metrics.mape) + "," + csv_cell(r.train.metrics.nmse);
  for (const SplitReport* split : {&r.test_id, &r.test_ood}) {
    line += "," + csv_cell(split->metrics.mape) + "," + csv_cell(split->metrics.nmse);
    for (std::size_t t = 0; t < taus.size(); ++t) {
      std::optional<int> acc;
      if (t < split->acc.size()) acc = split->acc[t].second;
      line += acc ? strprintf(",%d", *acc) : ",";
    }
  }
  return line;
}

inline std::uint64_t noise_seed(std::uint64_t base, int repeat, std::size_t problem_index) {
  return base + 1000003ULL * static_cast<std::uint64_t>(repeat) +
         static_cast<std::uint64_t>(problem_index);
}

}  // namespace detail

/// Run one problem and persist its artifacts (result JSON, trajectory
/// JSONL, buffer snapshot) under out_dir.
inline RunResult agent_run_to_files(const Problem& problem, LlmClient& client,
                                    const RunManifest& manifest,
                                    const std::filesystem::path& out_dir) {
  RunResult result = run(problem, client, manifest.agent, manifest.fit, manifest.taus);
  {
    std::ofstream traj(out_dir / (problem.id + "_trajectory.jsonl"), std::ios::binary);
    for (const auto& t : result.trajectories)
      for (const auto& line : trajectory_to_json_lines(t)) traj << line.dump() << '\n';
  }
  {
    std::ofstream res(out_dir / (problem.id + "_result.json"), std::ios::binary);
    res << run_result_to_json(result).dump(2) << '\n';
  }
  {
    std::ofstream snap(out_dir / (problem.id + "_buffer.jsonl"), std::ios::binary);
    snap << result.buffer.snapshot();
  }
  return result;
}

/// Run discovery over every problem in the manifest (bounded worker pool),
/// writing per-problem RunResult JSON, trajectory JSONL and a summary CSV.
/// Exit code 0 when every problem produced a result (a no-solution result
/// counts), 1 when infrastructure errors occurred.
inline int cmd_discover(const RunManifest& manifest, std::ostream& log = std::cerr) {
  manifest.validate();
  const std::filesystem::path out_root(manifest.output_dir);
  bool any_infra_error = false;

  std::vector<std::vector<detail::SummaryRow>> all_rows(
      static_cast<std::size_t>(manifest.repeats));

  for (int repeat = 0; repeat < manifest.repeats; ++repeat) {
    const auto out_dir =
        manifest.repeats > 1 ? out_root / ("repeat_" + std::to_string(repeat + 1)) : out_root;
    std::filesystem::create_directories(out_dir);
    auto& rows = all_rows[static_cast<std::size_t>(repeat)];
    rows.resize(manifest.problems.size());

    detail::parallel_for(
        manifest.problems.size(), manifest.parallelism, [&](std::size_t idx) {
          detail::SummaryRow& row = rows[idx];
          const ProblemRef& ref = manifest.problems[idx];
          try {
            Problem problem = load_problem(ref.path);
            row.problem = problem.id;
            if (manifest.noise_sigma > 0)
              problem.train = inject_noise(problem.train, manifest.noise_sigma,
                                           detail::noise_seed(manifest.seed, repeat, idx));
            LlmConfig llm_cfg = manifest.llm;
            if (!ref.policy.empty()) llm_cfg.policy = ref.policy;
            if (llm_cfg.backend == LlmBackend::Remote && llm_cfg.replay_path.empty())
              llm_cfg.record_path =
                  (out_dir / (problem.id + "_transcript.jsonl")).string();
            LlmClient client(llm_cfg);

            RunResult result =
                agent_run_to_files(problem, client, manifest, out_dir);
            row.result = std::move(result);
          } catch (const std::exception& e) {
            row.infra_error = true;
            row.error = e.what();
            if (row.problem.empty()) row.problem = ref.path;
          }
        });

    std::ofstream summary(out_dir / "summary.csv", std::ios::binary);
    summary << detail::summary_header(manifest.taus) << '\n';
    for (const auto& row : rows) {
      summary << detail::summary_row_csv(row, manifest.taus) << '\n';
      if (row.infra_error) {
        any_infra_error = true;
        log << "problem " << row.problem << " failed: " << row.error << '\n';
      }
    }
  }

  if (manifest.repeats > 1) {
    // averaged summary across repeats, per problem position
    std::filesystem::create_directories(out_root);
    std::ofstream summary(out_root / "summary.csv", std::ios::binary);
    summary << detail::summary_header(manifest.taus) << '\n';
    for (std::size_t idx = 0; idx < manifest.problems.size(); ++idx) {
      std::vector<std::string> cells;
      std::string name;
      std::size_t columns = 0;
      std::vector<std::vector<double>> numeric;
      bool any_error = false;
      for (int repeat = 0; repeat < manifest.repeats; ++repeat) {
        const auto& row = all_rows[static_cast<std::size_t>(repeat)][idx];
        if (row.infra_error || !row.result) {
          any_error = true;
          continue;
        }
        name = row.problem;
        std::istringstream line(detail::summary_row_csv(row, manifest.taus));
        std::string cell;
        std::vector<std::string> parts;
        while (std::getline(line, cell, ',')) parts.push_back(cell);
        columns = std::max(columns, parts.size());
        numeric.resize(columns);
        for (std::size_t c = 1; c < parts.size(); ++c)
          if (!parts[c].empty() && parts[c] != "inf")
            numeric[c].push_back(std::strtod(parts[c].c_str(), nullptr));
      }
      std::string out_line = name.empty() ? manifest.problems[idx].path : name;
      if (numeric.empty() && any_error) {
        summary << out_line << ",error\n";
        continue;
      }
      for (std::size_t c = 1; c < columns; ++c) {
        if (numeric[c].empty()) {
          out_line += ",";
          continue;
        }
        double mean = 0.0;
        for (double v : numeric[c]) mean += v;
        mean /= static_cast<double>(numeric[c].size());
        out_line += detail::strprintf(",%.10g", mean);
      }
      summary << out_line << '\n';
    }
  }

  return any_infra_error ? 1 : 0;
}

/// Synthesize problems from every skeleton spec (*.json) in a directory.
/// Rejected specs are listed with reasons in the synthesis report; they do
/// not fail the run.
inline int cmd_synth(const std::filesystem::path& spec_dir,
                     const std::filesystem::path& out_dir, std::uint64_t seed,
                     std::ostream& log = std::cerr) {
  if (!std::filesystem::is_directory(spec_dir))
    throw ConfigError("spec directory not found: " + spec_dir.string());
  std::vector<std::filesystem::path> spec_paths;
  for (const auto& entry : std::filesystem::directory_iterator(spec_dir))
    if (entry.path().extension() == ".json") spec_paths.push_back(entry.path());
  std::sort(spec_paths.begin(), spec_paths.end());
  if (spec_paths.empty()) throw ConfigError("no skeleton specs in " + spec_dir.string());

  std::filesystem::create_directories(out_dir);
  nlohmann::json report;
  report["accepted"] = nlohmann::json::array();
  report["rejected"] = nlohmann::json::array();

  for (std::size_t i = 0; i < spec_paths.size(); ++i) {
    const SkeletonSpec spec = load_skeleton_spec(spec_paths[i]);
    const SynthesisOutcome outcome = synthesize_problem(spec, seed + i);
    if (!outcome.accepted) {
      log << "rejected " << spec.id << ": " << outcome.reason << '\n';
      report["rejected"].push_back({{"id", spec.id}, {"reason", outcome.reason}});
      continue;
    }
    write_problem(outcome.problem, out_dir);
    report["accepted"].push_back(
        {{"id", spec.id}, {"manifest", outcome.problem.id + ".json"}});
  }
  std::ofstream rep(out_dir / "synthesis_report.json", std::ios::binary);
  rep << report.dump(2) << '\n';
  return 0;
}

/// Score a file of candidate equations (JSON array of skeleton strings)
/// against one problem: fit on train, report metrics on every split plus
/// the symbolic verdict against the stored ground truth. Per-row failures
/// become error rows; the command still exits 0.
inline int cmd_score(const std::filesystem::path& problem_manifest,
                     const std::filesystem::path& predictions_path, std::ostream& out,
                     const FitConfig& fit_cfg = {},
                     std::vector<double> taus = {0.01, 0.001}) {
  const Problem problem = load_problem(problem_manifest);
  std::ifstream in(predictions_path);
  if (!in) throw ConfigError("cannot open predictions file " + predictions_path.string());
  nlohmann::json preds;
  try {
    preds = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("predictions file " + predictions_path.string() + ": " + e.what());
  }
  if (!preds.is_array()) throw ConfigError("predictions file must be a JSON array of strings");

  const std::vector<std::string> var_names = problem.variable_names();
  std::optional<Expr> truth;
  if (problem.ground_truth)
    truth = parse_expression(problem.ground_truth->skeleton, var_names);

  std::string header = "index,status,equation,train_mse,train_nmse,train_mape,train_r2";
  for (const char* split : {"id", "ood"}) {
    header += std::string(",") + split + "_mape," + split + "_nmse";
    for (double tau : taus) header += detail::strprintf(",%s_acc_%g", split, tau);
  }
  header += ",symbolic";
  out << header << '\n';

  for (std::size_t i = 0; i < preds.size(); ++i) {
    const std::string text = preds[i].is_string() ? preds[i].get<std::string>() : preds[i].dump();
    std::string line = detail::strprintf("%zu", i);
    try {
      const Expr expr = parse_expression(text, var_names);
      const FitResult fit = fit_constants(expr, problem.train, 1e-3, fit_cfg);
      if (!fit.metrics.mse)
        throw std::runtime_error(fit.failure_reason.value_or("NaN/Inf objective"));
      line += ",ok,\"" + text + "\"";
      std::vector<double> y(problem.train.rows());
      for (std::size_t r = 0; r < problem.train.rows(); ++r) y[r] = problem.train.y(r);
      const auto y_pred = eval_batch(expr, problem.train, fit.params);
      line += "," + detail::csv_cell(fit.metrics.mse) + "," + detail::csv_cell(fit.metrics.nmse) +
              "," + detail::csv_cell(fit.metrics.mape) + "," +
              detail::csv_cell(r_squared(y, y_pred));
      for (const DataTable* split : {&problem.test_id, &problem.test_ood}) {
        std::vector<double> ys(split->rows());
        for (std::size_t r = 0; r < split->rows(); ++r) ys[r] = split->y(r);
        const auto ps = eval_batch(expr, *split, fit.params);
        line += "," + detail::csv_cell(mape(ys, ps)) + "," + detail::csv_cell(nmse(ys, ps));
        for (double tau : taus) {
          std::optional<int> acc;
          try {
            acc = acc_tolerance(ys, ps, {tau, 0.05});
          } catch (const std::exception&) {
          }
          line += acc ? detail::strprintf(",%d", *acc) : ",";
        }
      }
      if (truth) {
        const MatchVerdict verdict = symbolic_match(expr, *truth);
        line += verdict == MatchVerdict::Equivalent
                    ? ",equivalent"
                    : (verdict == MatchVerdict::NotEquivalent ? ",not_equivalent" : ",unknown");
      } else {
        line += ",";
      }
    } catch (const std::exception& e) {
      std::string reason = e.what();
      for (char& c : reason)
        if (c == ',' || c == '\n') c = ';';
      line = detail::strprintf("%zu", i) + ",error:" + reason + ",\"" + text + "\"";
    }
    out << line << '\n';
  }
  return 0;
}

/// Re-run discovery at each noise level and emit the degradation table.
/// sigma = 0 reproduces plain cmd_discover output.
inline int cmd_noise_sweep(const RunManifest& manifest, const std::vector<double>& sigmas,
                           std::ostream& log = std::cerr) {
  if (sigmas.empty()) throw ConfigError("noise sweep needs at least one sigma");
  for (double s : sigmas)
    if (s < 0) throw ConfigError("noise sigma must be nonnegative");
  manifest.validate();

  const std::filesystem::path out_root(manifest.output_dir);
  std::filesystem::create_directories(out_root);
  std::ofstream sweep(out_root / "noise_sweep.csv", std::ios::binary);
  sweep << "sigma," << detail::summary_header(manifest.taus) << '\n';

  int worst = 0;
  for (double sigma : sigmas) {
    RunManifest step = manifest;
    step.noise_sigma = sigma;
    step.output_dir = (out_root / detail::strprintf("sigma_%g", sigma)).string();
    const int code = cmd_discover(step, log);
    worst = std::max(worst, code);
    std::ifstream summary(std::filesystem::path(step.output_dir) / "summary.csv");
    std::string line;
    bool first = true;
    while (std::getline(summary, line)) {
      if (first) {
        first = false;
        continue;
      }
      sweep << detail::strprintf("%g,", sigma) << line << '\n';
    }
  }
  return worst;
}

}  // namespace symreg
