#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "symreg/cli.hpp"

using namespace symreg;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const fs::path kSpecDir = fs::path(SYMREG_TEST_DIR) / "fixtures" / "specs";

// synthesize the fixture problems once per process
const fs::path& problem_dir() {
  static const fs::path dir = [] {
    const fs::path d = fresh_dir("symreg_cli_problems");
    std::ostringstream null_log;
    REQUIRE(cmd_synth(kSpecDir, d, 7, null_log) == 0);
    return d;
  }();
  return dir;
}

RunManifest fixture_manifest(const fs::path& out_dir) {
  RunManifest m;
  m.problems = {{(problem_dir() / "MS01.json").string(),
                 "oracle_after_k:2:params[0]*T*eps + params[1]*T"},
                {(problem_dir() / "CH01.json").string(),
                 "oracle_after_k:2:-params[0]*C + params[1] + params[2]*sin(t)"}};
  m.output_dir = out_dir.string();
  m.llm.backend = LlmBackend::Scripted;
  m.agent.iterations = 3;
  m.agent.max_turns = 6;
  return m;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string cell;
  while (std::getline(in, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

TEST_CASE("cmd_synth writes split files with exact sizes and a report", "[cli]") {
  const fs::path out = fresh_dir("symreg_cli_synth");
  std::ostringstream log;
  REQUIRE(cmd_synth(kSpecDir, out, 3, log) == 0);

  const Problem p = load_problem(out / "MS01.json");
  REQUIRE(p.train.rows() == 4000);
  REQUIRE(p.test_id.rows() == 500);
  REQUIRE(p.test_ood.rows() == 500);

  const auto report = nlohmann::json::parse(read_file(out / "synthesis_report.json"));
  REQUIRE(report["accepted"].size() == 3);
  REQUIRE(report["rejected"].size() == 1);
  REQUIRE(report["rejected"][0]["id"] == "XX99");
  REQUIRE(log.str().find("XX99") != std::string::npos);
}

TEST_CASE("cmd_synth is byte-deterministic under a fixed seed", "[cli]") {
  const fs::path a = fresh_dir("symreg_cli_synth_a");
  const fs::path b = fresh_dir("symreg_cli_synth_b");
  std::ostringstream log;
  REQUIRE(cmd_synth(kSpecDir, a, 99, log) == 0);
  REQUIRE(cmd_synth(kSpecDir, b, 99, log) == 0);
  for (const auto& entry : fs::directory_iterator(a)) {
    const auto name = entry.path().filename();
    INFO("file: " << name);
    REQUIRE(read_file(entry.path()) == read_file(b / name));
  }
  const fs::path c = fresh_dir("symreg_cli_synth_c");
  REQUIRE(cmd_synth(kSpecDir, c, 100, log) == 0);
  REQUIRE(read_file(a / "MS01_train.json") != read_file(c / "MS01_train.json"));
}

TEST_CASE("cmd_discover produces summary rows with perfect oracle accuracy", "[cli]") {
  const fs::path out = fresh_dir("symreg_cli_discover");
  const RunManifest manifest = fixture_manifest(out);
  std::ostringstream log;
  REQUIRE(cmd_discover(manifest, log) == 0);

  const std::string summary = read_file(out / "summary.csv");
  std::istringstream lines(summary);
  std::string header, row1, row2;
  REQUIRE(std::getline(lines, header));
  REQUIRE(std::getline(lines, row1));
  REQUIRE(std::getline(lines, row2));
  REQUIRE(header ==
          "problem,solved,iterations,llm_calls,train_mape,train_nmse,id_mape,id_nmse,"
          "id_acc_0.01,id_acc_0.001,ood_mape,ood_nmse,ood_acc_0.01,ood_acc_0.001");
  const auto headers = split_csv_line(header);
  for (const std::string& row : {row1, row2}) {
    const auto cells = split_csv_line(row);
    REQUIRE(cells.size() == headers.size());
    std::map<std::string, std::string> record;
    for (std::size_t i = 0; i < cells.size(); ++i) record[headers[i]] = cells[i];
    REQUIRE(record["solved"] == "1");
    REQUIRE(record["id_acc_0.01"] == "1");
    REQUIRE(record["id_acc_0.001"] == "1");
    REQUIRE(record["ood_acc_0.01"] == "1");
    REQUIRE(record["ood_acc_0.001"] == "1");
  }
  REQUIRE(row1.rfind("MS01,", 0) == 0);
  REQUIRE(row2.rfind("CH01,", 0) == 0);

  // per-problem artifacts exist
  for (const char* id : {"MS01", "CH01"}) {
    REQUIRE(fs::exists(out / (std::string(id) + "_result.json")));
    REQUIRE(fs::exists(out / (std::string(id) + "_trajectory.jsonl")));
    REQUIRE(fs::exists(out / (std::string(id) + "_buffer.jsonl")));
  }
}

TEST_CASE("scripted discovery reruns are byte-identical", "[cli]") {
  const fs::path a = fresh_dir("symreg_cli_discover_a");
  const fs::path b = fresh_dir("symreg_cli_discover_b");
  std::ostringstream log;
  REQUIRE(cmd_discover(fixture_manifest(a), log) == 0);
  REQUIRE(cmd_discover(fixture_manifest(b), log) == 0);
  for (const auto& entry : fs::directory_iterator(a)) {
    const auto name = entry.path().filename();
    INFO("file: " << name);
    REQUIRE(read_file(entry.path()) == read_file(b / name));
  }
}

TEST_CASE("parallel discovery matches sequential output", "[cli]") {
  const fs::path seq = fresh_dir("symreg_cli_seq");
  const fs::path par = fresh_dir("symreg_cli_par");
  std::ostringstream log;
  RunManifest sequential = fixture_manifest(seq);
  sequential.parallelism = 1;
  RunManifest parallel = fixture_manifest(par);
  parallel.parallelism = 4;
  REQUIRE(cmd_discover(sequential, log) == 0);
  REQUIRE(cmd_discover(parallel, log) == 0);
  REQUIRE(read_file(seq / "summary.csv") == read_file(par / "summary.csv"));
}

TEST_CASE("repeats write per-repeat artifacts plus an averaged summary", "[cli]") {
  const fs::path out = fresh_dir("symreg_cli_repeats");
  RunManifest manifest = fixture_manifest(out);
  manifest.repeats = 3;
  std::ostringstream log;
  REQUIRE(cmd_discover(manifest, log) == 0);
  for (int r = 1; r <= 3; ++r)
    REQUIRE(fs::exists(out / ("repeat_" + std::to_string(r)) / "summary.csv"));
  const std::string averaged = read_file(out / "summary.csv");
  REQUIRE(averaged.find("MS01,1,") != std::string::npos);
  // deterministic repeats: the average equals each repeat's row
  const std::string one = read_file(out / "repeat_1" / "summary.csv");
  REQUIRE(one.substr(one.find('\n') + 1).find("MS01,1,") != std::string::npos);
}

TEST_CASE("bad manifests are config errors", "[cli]") {
  REQUIRE_THROWS_AS(load_run_manifest("/does/not/exist.json"), ConfigError);
  RunManifest empty;
  REQUIRE_THROWS_AS(empty.validate(), ConfigError);
  RunManifest bad = fixture_manifest(fs::temp_directory_path() / "x");
  bad.noise_sigma = -0.5;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
  RunManifest missing = fixture_manifest(fs::temp_directory_path() / "x");
  missing.problems[0].path = "/missing/problem.json";
  REQUIRE_THROWS_AS(missing.validate(), ConfigError);
}

TEST_CASE("cmd_score grades predictions against ground truth", "[cli]") {
  const fs::path dir = fresh_dir("symreg_cli_score");
  const fs::path preds = dir / "preds.json";
  std::ofstream(preds) << R"(["params[0]*T*eps + params[1]*T", "params[0]", "params[0]*("])";
  std::ostringstream out;
  REQUIRE(cmd_score(problem_dir() / "MS01.json", preds, out) == 0);
  std::istringstream lines(out.str());
  std::string header, truth_row, const_row, error_row;
  REQUIRE(std::getline(lines, header));
  REQUIRE(std::getline(lines, truth_row));
  REQUIRE(std::getline(lines, const_row));
  REQUIRE(std::getline(lines, error_row));
  REQUIRE(header.rfind("index,status,equation,", 0) == 0);
  REQUIRE(header.find(",symbolic") != std::string::npos);
  REQUIRE(truth_row.find(",ok,") != std::string::npos);
  REQUIRE(truth_row.find(",equivalent") != std::string::npos);
  REQUIRE(truth_row.find(",1") != std::string::npos);  // acc columns
  REQUIRE(const_row.find(",ok,") != std::string::npos);
  REQUIRE(const_row.find(",not_equivalent") != std::string::npos);  // variable sets differ
  REQUIRE(error_row.find("error:") != std::string::npos);
}

TEST_CASE("noise sweep emits a degradation table with a zero baseline", "[cli]") {
  const fs::path out = fresh_dir("symreg_cli_sweep");
  RunManifest manifest = fixture_manifest(out);
  manifest.problems.resize(1);  // keep it quick
  std::ostringstream log;
  REQUIRE(cmd_noise_sweep(manifest, {0.0, 0.01}, log) == 0);
  const std::string sweep = read_file(out / "noise_sweep.csv");
  REQUIRE(sweep.find("sigma,problem,") == 0);
  REQUIRE(sweep.find("0,MS01,") != std::string::npos);
  REQUIRE(sweep.find("0.01,MS01,") != std::string::npos);

  // the sigma = 0 block equals a plain discover run
  const std::string zero_summary = read_file(out / "sigma_0" / "summary.csv");
  const fs::path plain = fresh_dir("symreg_cli_sweep_plain");
  RunManifest plain_manifest = manifest;
  plain_manifest.output_dir = plain.string();
  REQUIRE(cmd_discover(plain_manifest, log) == 0);
  REQUIRE(zero_summary == read_file(plain / "summary.csv"));

  REQUIRE_THROWS_AS(cmd_noise_sweep(manifest, {-0.1}, log), ConfigError);
}

TEST_CASE("noisy training data still yields a scored run", "[cli]") {
  const fs::path out = fresh_dir("symreg_cli_noisy");
  RunManifest manifest = fixture_manifest(out);
  manifest.problems.resize(1);
  manifest.noise_sigma = 0.05;
  std::ostringstream log;
  REQUIRE(cmd_discover(manifest, log) == 0);
  const std::string summary = read_file(out / "summary.csv");
  REQUIRE(summary.find("MS01,1,") != std::string::npos);
}
