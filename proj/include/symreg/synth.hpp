#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "symreg/dataset.hpp"
#include "symreg/llm.hpp"
#include "symreg/ode.hpp"
#include "symreg/parser.hpp"

namespace symreg {

class SynthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SkeletonConstant {
  std::string name;
  double value = 0.0;
  std::string rationale;
};

struct SkeletonVariable {
  std::string name;
  std::string description;
  double low = 0.0;
  double high = 1.0;
};

struct SkeletonState {
  std::string name;
  std::string description;
  double initial = 0.0;
  std::string derivative;  // over state names, time and constant names
};

/// Blueprint for one synthesized problem: a target expression with named
/// constants plus either variable ranges (static grids) or an initial-value
/// dynamic system sampled over time.
struct SkeletonSpec {
  enum class Mode { Static, Dynamic };

  std::string id;
  Domain domain = Domain::Other;
  std::string target_name;
  std::string target_description;
  Mode mode = Mode::Static;
  int term_count = 2;
  std::vector<SkeletonConstant> constants;

  // static systems
  std::string expression;  // target over inputs and constant names
  std::vector<SkeletonVariable> variables;
  int grid_total = 5000;

  // dynamic systems
  std::vector<SkeletonState> states;
  std::string time_name = "t";
  std::string time_description = "Time";
  std::string target_state;              // the state whose derivative is the target
  std::vector<std::string> input_order;  // problem variables: states and time
  double time_end = 60.0;
  int samples = 5000;

  void validate() const {
    if (id.empty()) throw SynthError("skeleton spec needs an id");
    if (term_count < 2 || term_count > 4)
      throw SynthError("spec " + id + ": term count must be within [2, 4]");
    for (const auto& c : constants)
      if (!std::isfinite(c.value))
        throw SynthError("spec " + id + ": constant " + c.name + " is not finite");
    if (mode == Mode::Static) {
      if (variables.empty()) throw SynthError("spec " + id + ": static mode needs variables");
      for (const auto& v : variables)
        if (!(v.low < v.high))
          throw SynthError("spec " + id + ": bad range for variable " + v.name);
    } else {
      if (states.empty()) throw SynthError("spec " + id + ": dynamic mode needs states");
      if (target_state.empty())
        throw SynthError("spec " + id + ": dynamic mode needs a target state");
      if (input_order.empty())
        throw SynthError("spec " + id + ": dynamic mode needs the input order");
    }
  }
};

inline SkeletonSpec skeleton_spec_from_json(const nlohmann::json& j) {
  SkeletonSpec s;
  s.id = j.at("id").get<std::string>();
  s.domain = domain_from_string(j.at("domain").get<std::string>());
  s.target_name = j.at("target_name").get<std::string>();
  s.target_description = j.at("target_description").get<std::string>();
  const std::string mode = j.at("mode").get<std::string>();
  if (mode == "static")
    s.mode = SkeletonSpec::Mode::Static;
  else if (mode == "dynamic")
    s.mode = SkeletonSpec::Mode::Dynamic;
  else
    throw SynthError("spec " + s.id + ": unknown mode '" + mode + "'");
  s.term_count = j.at("term_count").get<int>();
  for (const auto& c : j.value("constants", nlohmann::json::array()))
    s.constants.push_back({c.at("name").get<std::string>(), c.at("value").get<double>(),
                           c.value("rationale", std::string{})});
  if (s.mode == SkeletonSpec::Mode::Static) {
    s.expression = j.at("expression").get<std::string>();
    for (const auto& v : j.at("variables"))
      s.variables.push_back({v.at("name").get<std::string>(),
                             v.value("description", std::string{}),
                             v.at("range").at(0).get<double>(),
                             v.at("range").at(1).get<double>()});
    s.grid_total = j.value("grid_total", 5000);
  } else {
    for (const auto& st : j.at("states"))
      s.states.push_back({st.at("name").get<std::string>(),
                          st.value("description", std::string{}),
                          st.at("initial").get<double>(),
                          st.at("derivative").get<std::string>()});
    s.time_name = j.value("time_name", std::string{"t"});
    s.time_description = j.value("time_description", std::string{"Time"});
    s.target_state = j.at("target_state").get<std::string>();
    for (const auto& n : j.at("input_order")) s.input_order.push_back(n.get<std::string>());
    s.time_end = j.value("time_end", 60.0);
    s.samples = j.value("samples", 5000);
  }
  s.validate();
  return s;
}

inline SkeletonSpec load_skeleton_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SynthError("cannot open skeleton spec " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw SynthError("skeleton spec " + path.string() + ": " + e.what());
  }
  return skeleton_spec_from_json(j);
}

namespace detail {

// substitute Var nodes at indices >= first_constant with constant values
inline Expr substitute_constants(const Expr& e, int first_constant,
                                 std::span<const double> values) {
  switch (e.kind()) {
    case NodeKind::Var: {
      if (e.index() >= first_constant)
        return Expr::constant(values[static_cast<std::size_t>(e.index() - first_constant)]);
      return e;
    }
    case NodeKind::Unary:
      return Expr::unary(e.unary_op(), substitute_constants(e.child(), first_constant, values));
    case NodeKind::Binary:
      return Expr::binary(e.binary_op(),
                          substitute_constants(e.lhs(), first_constant, values),
                          substitute_constants(e.rhs(), first_constant, values));
    default:
      return e;
  }
}

// replace constant Vars with params in first-occurrence order
inline Expr parameterize(const Expr& e, int first_constant, std::array<int, kMaxParams>& assigned,
                         int& next, std::span<const double> values,
                         std::array<double, kMaxParams>& param_values) {
  switch (e.kind()) {
    case NodeKind::Var: {
      if (e.index() < first_constant) return e;
      const int which = e.index() - first_constant;
      if (assigned[static_cast<std::size_t>(which)] < 0) {
        if (next >= kMaxParams) throw SynthError("more constants than parameter slots");
        assigned[static_cast<std::size_t>(which)] = next;
        param_values[static_cast<std::size_t>(next)] = values[static_cast<std::size_t>(which)];
        ++next;
      }
      return Expr::param(assigned[static_cast<std::size_t>(which)]);
    }
    case NodeKind::Unary:
      return Expr::unary(e.unary_op(),
                         parameterize(e.child(), first_constant, assigned, next, values,
                                      param_values));
    case NodeKind::Binary: {
      Expr l = parameterize(e.lhs(), first_constant, assigned, next, values, param_values);
      Expr r = parameterize(e.rhs(), first_constant, assigned, next, values, param_values);
      return Expr::binary(e.binary_op(), l, r);
    }
    default:
      return e;
  }
}

// split a total into `axes` factors as near-equal as possible (exact when
// the total factorizes; otherwise the smallest product >= total)
inline std::vector<int> grid_axis_counts(int total, int axes) {
  if (axes == 1) return {total};
  std::vector<int> best;
  double best_spread = std::numeric_limits<double>::infinity();
  std::vector<int> current;
  const std::function<void(int, int)> search = [&](int remaining, int axis) {
    if (axis == axes - 1) {
      if (remaining < 2) return;
      current.push_back(remaining);
      const auto [mn, mx] = std::minmax_element(current.begin(), current.end());
      const double spread = static_cast<double>(*mx) / static_cast<double>(*mn);
      if (spread < best_spread) {
        best_spread = spread;
        best = current;
      }
      current.pop_back();
      return;
    }
    for (int f = 2; f <= remaining; ++f) {
      if (remaining % f != 0) continue;
      current.push_back(f);
      search(remaining / f, axis + 1);
      current.pop_back();
    }
  };
  search(total, 0);
  if (best.empty()) {
    // no exact factorization; cover the total with equal counts
    const int per = static_cast<int>(std::ceil(std::pow(total, 1.0 / axes)));
    best.assign(static_cast<std::size_t>(axes), std::max(per, 2));
  }
  std::sort(best.begin(), best.end());
  return best;
}

}  // namespace detail

/// Evenly spaced grid over the given ranges, endpoints included; counts
/// default to the most-square factorization of ~5000 total points, assigned
/// ascending along the axis order. Column order: y, then the axes.
inline std::vector<std::vector<double>> sample_static_grid(
    const Expr& truth, const std::vector<std::pair<double, double>>& ranges,
    std::vector<int> counts = {}, int total = 5000) {
  if (ranges.empty()) throw SynthError("need at least one range");
  if (counts.empty()) counts = detail::grid_axis_counts(total, static_cast<int>(ranges.size()));
  if (counts.size() != ranges.size())
    throw SynthError("axis count list does not match the ranges");
  for (int c : counts)
    if (c < 2) throw SynthError("each axis needs at least 2 grid points");

  std::size_t rows = 1;
  for (int c : counts) rows *= static_cast<std::size_t>(c);
  const std::array<double, kMaxParams> no_params{};
  std::vector<std::vector<double>> out;
  out.reserve(rows);
  std::vector<int> idx(ranges.size(), 0);
  std::vector<double> point(ranges.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t a = 0; a < ranges.size(); ++a) {
      const auto [lo, hi] = ranges[a];
      point[a] = lo + (hi - lo) * static_cast<double>(idx[a]) /
                          static_cast<double>(counts[a] - 1);
    }
    std::vector<double> row;
    row.reserve(ranges.size() + 1);
    row.push_back(eval_row(truth, point, no_params));
    row.insert(row.end(), point.begin(), point.end());
    out.push_back(std::move(row));
    // odometer, last axis fastest
    for (int a = static_cast<int>(ranges.size()) - 1; a >= 0; --a) {
      if (++idx[static_cast<std::size_t>(a)] < counts[static_cast<std::size_t>(a)]) break;
      idx[static_cast<std::size_t>(a)] = 0;
    }
  }
  return out;
}

struct SplitSet {
  DataTable train, test_id, test_ood;
};

namespace detail {
// deterministic Fisher-Yates, independent of std::shuffle's library variance
inline void shuffle_indices(std::vector<std::size_t>& idx, std::mt19937_64& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
}
}  // namespace detail

/// OOD split takes the rows with the largest key (the driving variable:
/// first input for static grids, time for dynamic systems); the remainder
/// is shuffled into an in-domain test set and the training set. Sizes are
/// 10% / 10% / 80%, i.e. (500, 500, 4000) at n = 5000.
inline SplitSet make_splits(const DataTable& table, std::size_t key_column,
                            std::uint64_t seed) {
  const std::size_t n = table.rows();
  if (key_column == 0 || key_column > static_cast<std::size_t>(table.dim()))
    throw SynthError("split key must name an input column");
  const std::size_t ood_count = n / 10;
  const std::size_t id_count = n / 10;
  if (ood_count == 0 || n - ood_count - id_count == 0)
    throw SynthError("table too small to split");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return table.at(a, key_column) < table.at(b, key_column);
  });

  std::vector<std::size_t> ood(order.end() - static_cast<std::ptrdiff_t>(ood_count),
                               order.end());
  std::vector<std::size_t> rest(order.begin(),
                                order.end() - static_cast<std::ptrdiff_t>(ood_count));
  std::mt19937_64 rng(seed);
  detail::shuffle_indices(rest, rng);

  const auto build = [&](std::span<const std::size_t> rows) {
    std::vector<double> flat;
    flat.reserve(rows.size() * (static_cast<std::size_t>(table.dim()) + 1));
    for (std::size_t i : rows)
      for (double v : table.row(i)) flat.push_back(v);
    return DataTable::from_flat(std::move(flat), table.dim());
  };
  SplitSet out;
  out.test_id = build(std::span(rest).subspan(0, id_count));
  out.train = build(std::span(rest).subspan(id_count));
  out.test_ood = build(ood);
  return out;
}

/// Reject rules for synthesized tables: non-finite entries, runaway target
/// magnitude, or a degenerate constant target.
inline std::optional<std::string> filter_anomalous(
    const std::vector<std::vector<double>>& rows) {
  double y_min = std::numeric_limits<double>::infinity();
  double y_max = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (double v : rows[i])
      if (!std::isfinite(v)) return "non-finite value at row " + std::to_string(i);
    y_min = std::min(y_min, rows[i][0]);
    y_max = std::max(y_max, rows[i][0]);
  }
  if (rows.empty()) return "no rows generated";
  if (std::max(std::abs(y_min), std::abs(y_max)) > 1e8)
    return "target magnitude exceeds 1e8";
  if (y_max - y_min <= 1e-12) return "degenerate constant target";
  return std::nullopt;
}

struct SynthesisOutcome {
  bool accepted = false;
  std::string reason;  // set when rejected
  Problem problem;
};

/// Build a full problem (tables, splits, ground truth) from a spec.
/// Rejected specs report the filter or integration reason instead of
/// throwing.
inline SynthesisOutcome synthesize_problem(const SkeletonSpec& spec, std::uint64_t seed) {
  spec.validate();
  SynthesisOutcome out;

  std::vector<std::string> constant_names;
  std::vector<double> constant_values;
  for (const auto& c : spec.constants) {
    constant_names.push_back(c.name);
    constant_values.push_back(c.value);
  }

  std::vector<std::vector<double>> rows;
  std::vector<VariableInfo> variables;
  std::size_t key_column = 1;
  Expr truth_skeleton;                      // params in place of constants
  std::array<double, kMaxParams> truth_params;
  truth_params.fill(1.0);

  if (spec.mode == SkeletonSpec::Mode::Static) {
    std::vector<std::string> parse_names;
    std::vector<std::pair<double, double>> ranges;
    for (const auto& v : spec.variables) {
      parse_names.push_back(v.name);
      variables.push_back({v.name, v.description});
      ranges.emplace_back(v.low, v.high);
    }
    const int first_constant = static_cast<int>(parse_names.size());
    parse_names.insert(parse_names.end(), constant_names.begin(), constant_names.end());
    const Expr raw = parse_expression(spec.expression, parse_names);
    const Expr truth = detail::substitute_constants(raw, first_constant, constant_values);
    std::array<int, kMaxParams> assigned;
    assigned.fill(-1);
    int next = 0;
    truth_skeleton =
        detail::parameterize(raw, first_constant, assigned, next, constant_values, truth_params);
    rows = sample_static_grid(truth, ranges, {}, spec.grid_total);
    key_column = 1;  // first input drives the OOD region
  } else {
    // dynamic: integrate the system, then tabulate the target derivative
    std::vector<std::string> state_names;
    std::vector<double> y0;
    for (const auto& st : spec.states) {
      state_names.push_back(st.name);
      y0.push_back(st.initial);
    }
    std::vector<std::string> rhs_names = state_names;
    rhs_names.push_back(spec.time_name);
    const int first_constant = static_cast<int>(rhs_names.size());
    std::vector<std::string> rhs_parse_names = rhs_names;
    rhs_parse_names.insert(rhs_parse_names.end(), constant_names.begin(), constant_names.end());

    OdeSpec ode;
    ode.state_names = state_names;
    ode.initial_state = y0;
    ode.t_begin = 0.0;
    ode.t_end = spec.time_end;
    ode.samples = spec.samples;
    int target_index = -1;
    for (std::size_t i = 0; i < spec.states.size(); ++i) {
      const Expr raw = parse_expression(spec.states[i].derivative, rhs_parse_names);
      ode.rhs.push_back(detail::substitute_constants(raw, first_constant, constant_values));
      if (spec.states[i].name == spec.target_state) target_index = static_cast<int>(i);
    }
    if (target_index < 0)
      throw SynthError("spec " + spec.id + ": target state '" + spec.target_state +
                       "' is not a state");

    OdeSolution sol;
    try {
      sol = integrate_rk45(ode);
    } catch (const IntegrationError& e) {
      out.reason = std::string("integration failed: ") + e.what();
      return out;
    }

    // problem variables in the declared order; the skeleton is expressed
    // over these names
    std::vector<std::string> problem_names = spec.input_order;
    for (const auto& name : problem_names) {
      bool known = name == spec.time_name;
      for (const auto& st : spec.states) known = known || st.name == name;
      if (!known)
        throw SynthError("spec " + spec.id + ": input '" + name + "' is not a state or time");
      if (name == spec.time_name)
        variables.push_back({name, spec.time_description});
      else
        for (const auto& st : spec.states)
          if (st.name == name) variables.push_back({name, st.description});
    }
    std::vector<std::string> target_parse_names = problem_names;
    target_parse_names.insert(target_parse_names.end(), constant_names.begin(),
                              constant_names.end());
    const Expr target_raw =
        parse_expression(spec.states[static_cast<std::size_t>(target_index)].derivative,
                         target_parse_names);
    const Expr target_truth =
        detail::substitute_constants(target_raw, static_cast<int>(problem_names.size()),
                                     constant_values);
    std::array<int, kMaxParams> assigned;
    assigned.fill(-1);
    int next = 0;
    truth_skeleton = detail::parameterize(target_raw, static_cast<int>(problem_names.size()),
                                          assigned, next, constant_values, truth_params);

    const std::array<double, kMaxParams> no_params{};
    std::vector<double> point(problem_names.size());
    rows.reserve(sol.times.size());
    for (std::size_t k = 0; k < sol.times.size(); ++k) {
      for (std::size_t a = 0; a < problem_names.size(); ++a) {
        if (problem_names[a] == spec.time_name) {
          point[a] = sol.times[k];
        } else {
          for (std::size_t s = 0; s < state_names.size(); ++s)
            if (state_names[s] == problem_names[a]) point[a] = sol.states[k][s];
        }
      }
      std::vector<double> row;
      row.reserve(point.size() + 1);
      row.push_back(eval_row(target_truth, point, no_params));
      row.insert(row.end(), point.begin(), point.end());
      rows.push_back(std::move(row));
    }
    for (std::size_t a = 0; a < problem_names.size(); ++a)
      if (problem_names[a] == spec.time_name) key_column = a + 1;
  }

  if (const auto reason = filter_anomalous(rows)) {
    out.reason = *reason;
    return out;
  }

  const DataTable table = DataTable::from_rows(rows);
  const SplitSet splits = make_splits(table, key_column, seed);

  out.accepted = true;
  out.problem.id = spec.id;
  out.problem.domain = spec.domain;
  out.problem.target_name = spec.target_name;
  out.problem.target_description = spec.target_description;
  out.problem.variables = variables;
  out.problem.train = splits.train;
  out.problem.test_id = splits.test_id;
  out.problem.test_ood = splits.test_ood;
  GroundTruth gt;
  std::vector<std::string> names;
  for (const auto& v : variables) names.push_back(v.name);
  gt.skeleton = to_text(truth_skeleton, names);
  gt.params = truth_params;
  out.problem.ground_truth = std::move(gt);
  out.problem.validate();
  return out;
}

/// Write manifest plus the three split tables under `dir`, file names keyed
/// by the problem id. Returns the manifest path.
inline std::filesystem::path write_problem(const Problem& problem,
                                           const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto write_file = [&](const std::string& name, const std::string& contents) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw SynthError("cannot write " + (dir / name).string());
    out << contents;
  };
  write_file(problem.id + "_train.json", serialize_table(problem.train));
  write_file(problem.id + "_test_id.json", serialize_table(problem.test_id));
  write_file(problem.id + "_test_ood.json", serialize_table(problem.test_ood));

  nlohmann::json manifest;
  manifest["id"] = problem.id;
  manifest["domain"] = domain_to_string(problem.domain);
  manifest["target_name"] = problem.target_name;
  manifest["target_description"] = problem.target_description;
  nlohmann::json vars = nlohmann::json::array();
  for (const auto& v : problem.variables)
    vars.push_back({{"name", v.name}, {"description", v.description}});
  manifest["variables"] = std::move(vars);
  manifest["files"] = {{"train", problem.id + "_train.json"},
                       {"test_id", problem.id + "_test_id.json"},
                       {"test_ood", problem.id + "_test_ood.json"}};
  if (problem.ground_truth) {
    manifest["ground_truth"] = {{"skeleton", problem.ground_truth->skeleton},
                                {"params", problem.ground_truth->params}};
  }
  const auto manifest_path = dir / (problem.id + ".json");
  write_file(problem.id + ".json", manifest.dump(2) + "\n");
  return manifest_path;
}

/// Ask a chat backend for candidate skeleton specs (known plus novel term
/// mixes). Output is advisory and needs human review before use.
inline std::vector<SkeletonSpec> generate_skeletons(Domain domain, LlmClient& client) {
  const std::string prompt =
      "Propose equation skeletons for new " + domain_to_string(domain) +
      " problems. Each skeleton must combine at least one well-known term with at least one "
      "novel term, using 2 to 4 terms joined by addition, and give every constant a value "
      "justified by its physical significance.\n"
      "Reply with a JSON array only. Each element must match this schema:\n"
      "{\"id\": string, \"domain\": string, \"target_name\": string, "
      "\"target_description\": string, \"mode\": \"static\"|\"dynamic\", \"term_count\": int, "
      "\"constants\": [{\"name\": string, \"value\": number, \"rationale\": string}], "
      "\"expression\": string (static), \"variables\": [{\"name\": string, \"description\": "
      "string, \"range\": [low, high]}] (static), \"states\": [{\"name\": string, "
      "\"description\": string, \"initial\": number, \"derivative\": string}] (dynamic), "
      "\"target_state\": string (dynamic), \"input_order\": [string] (dynamic)}";
  std::vector<ChatMessage> history{
      ChatMessage::system("You design benchmark problems for equation discovery."),
      ChatMessage::user(prompt)};
  const ChatMessage reply = client.complete(history, nlohmann::json::array());

  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(reply.content);
  } catch (const nlohmann::json::exception&) {
    const auto start = reply.content.find('[');
    const auto end = reply.content.rfind(']');
    if (start == std::string::npos || end == std::string::npos || end <= start)
      throw SynthError("skeleton generation reply is not JSON");
    try {
      parsed = nlohmann::json::parse(reply.content.substr(start, end - start + 1));
    } catch (const nlohmann::json::exception& e) {
      throw SynthError(std::string("skeleton generation reply is not JSON: ") + e.what());
    }
  }
  if (!parsed.is_array() || parsed.empty())
    throw SynthError("skeleton generation reply must be a non-empty JSON array");
  std::vector<SkeletonSpec> specs;
  for (const auto& item : parsed) specs.push_back(skeleton_spec_from_json(item));
  return specs;
}

}  // namespace symreg
