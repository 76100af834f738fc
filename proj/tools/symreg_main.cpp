#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "symreg/cli.hpp"

namespace {

void apply_overrides(symreg::RunManifest& manifest, const std::string& out_dir,
                     const std::string& backend, const std::string& policy, int repeats,
                     int parallel, std::int64_t seed, const std::vector<double>& taus) {
  if (!out_dir.empty()) manifest.output_dir = out_dir;
  if (!backend.empty()) {
    if (backend == "scripted")
      manifest.llm.backend = symreg::LlmBackend::Scripted;
    else if (backend == "remote")
      manifest.llm.backend = symreg::LlmBackend::Remote;
    else
      throw symreg::ConfigError("unknown backend '" + backend + "'");
  }
  if (!policy.empty()) manifest.llm.policy = policy;
  if (repeats > 0) manifest.repeats = repeats;
  if (parallel > 0) manifest.parallelism = parallel;
  if (seed >= 0) manifest.seed = static_cast<std::uint64_t>(seed);
  if (!taus.empty()) manifest.taus = taus;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Agentic symbolic-regression toolkit"};
  app.require_subcommand(1);

  std::string manifest_path, out_dir, backend, policy;
  int repeats = 0, parallel = 0;
  std::int64_t seed = -1;
  std::vector<double> taus;

  auto* discover = app.add_subcommand("discover", "Run equation discovery over a manifest");
  discover->add_option("--manifest", manifest_path, "Run manifest (JSON)")->required();
  discover->add_option("--out", out_dir, "Output directory override");
  discover->add_option("--backend", backend, "LLM backend: scripted or remote");
  discover->add_option("--policy", policy, "Scripted policy id");
  discover->add_option("--repeats", repeats, "Repeat count (averaged summary)");
  discover->add_option("--parallel", parallel, "Worker pool size");
  discover->add_option("--seed", seed, "Base seed");
  discover->add_option("--tau", taus, "Accuracy tolerance (repeatable)");

  std::string spec_dir, synth_out;
  std::int64_t synth_seed = 0;
  auto* synth = app.add_subcommand("synth", "Synthesize problems from skeleton specs");
  synth->add_option("--specs", spec_dir, "Directory of skeleton spec JSON files")->required();
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--seed", synth_seed, "Split shuffle seed");

  std::string score_problem, predictions, score_out;
  auto* score = app.add_subcommand("score", "Score candidate equations against a problem");
  score->add_option("--problem", score_problem, "Problem manifest (JSON)")->required();
  score->add_option("--predictions", predictions, "JSON array of equation strings")->required();
  score->add_option("--out", score_out, "CSV output path (default stdout)");
  score->add_option("--tau", taus, "Accuracy tolerance (repeatable)");

  std::vector<double> sigmas;
  auto* sweep = app.add_subcommand("noise-sweep", "Discovery under injected training noise");
  sweep->add_option("--manifest", manifest_path, "Run manifest (JSON)")->required();
  sweep->add_option("--sigma", sigmas, "Noise level (repeatable)")->required();
  sweep->add_option("--out", out_dir, "Output directory override");
  sweep->add_option("--backend", backend, "LLM backend: scripted or remote");
  sweep->add_option("--policy", policy, "Scripted policy id");
  sweep->add_option("--parallel", parallel, "Worker pool size");
  sweep->add_option("--seed", seed, "Base seed");
  sweep->add_option("--tau", taus, "Accuracy tolerance (repeatable)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (discover->parsed()) {
      symreg::RunManifest manifest = symreg::load_run_manifest(manifest_path);
      apply_overrides(manifest, out_dir, backend, policy, repeats, parallel, seed, taus);
      return symreg::cmd_discover(manifest);
    }
    if (synth->parsed()) {
      return symreg::cmd_synth(spec_dir, synth_out,
                               static_cast<std::uint64_t>(std::max<std::int64_t>(synth_seed, 0)));
    }
    if (score->parsed()) {
      if (score_out.empty())
        return symreg::cmd_score(score_problem, predictions, std::cout, {},
                                 taus.empty() ? std::vector<double>{0.01, 0.001} : taus);
      std::ofstream out(score_out, std::ios::binary);
      if (!out) throw symreg::ConfigError("cannot open output file " + score_out);
      return symreg::cmd_score(score_problem, predictions, out, {},
                               taus.empty() ? std::vector<double>{0.01, 0.001} : taus);
    }
    if (sweep->parsed()) {
      symreg::RunManifest manifest = symreg::load_run_manifest(manifest_path);
      apply_overrides(manifest, out_dir, backend, policy, 0, parallel, seed, taus);
      return symreg::cmd_noise_sweep(manifest, sigmas);
    }
  } catch (const symreg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
