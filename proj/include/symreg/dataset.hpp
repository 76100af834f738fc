#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "symreg/detail/text.hpp"
#include "symreg/expr.hpp"

namespace symreg {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Immutable observation table. Each row is [y, x_1 .. x_d] with the target
/// first; all entries finite.
class DataTable {
 public:
  DataTable() = default;

  static DataTable from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw DatasetError("table must have at least one row");
    const std::size_t width = rows.front().size();
    if (width < 2) throw DatasetError("row 0: need a target and at least one input");
    DataTable t;
    t.dim_ = static_cast<int>(width) - 1;
    t.data_.reserve(rows.size() * width);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != width)
        throw DatasetError("row " + std::to_string(i) + ": expected " + std::to_string(width) +
                           " values, got " + std::to_string(rows[i].size()));
      for (double v : rows[i]) {
        if (!std::isfinite(v))
          throw DatasetError("row " + std::to_string(i) + ": non-finite value");
        t.data_.push_back(v);
      }
    }
    return t;
  }

  static DataTable from_flat(std::vector<double> data, int dim) {
    DataTable t;
    if (dim < 1) throw DatasetError("input dimension must be positive");
    const std::size_t width = static_cast<std::size_t>(dim) + 1;
    if (data.empty() || data.size() % width != 0)
      throw DatasetError("flat data size not a multiple of row width");
    for (std::size_t i = 0; i < data.size(); ++i)
      if (!std::isfinite(data[i]))
        throw DatasetError("row " + std::to_string(i / width) + ": non-finite value");
    t.data_ = std::move(data);
    t.dim_ = dim;
    return t;
  }

  int dim() const { return dim_; }
  std::size_t rows() const { return dim_ == 0 ? 0 : data_.size() / width(); }
  double y(std::size_t i) const { return data_[i * width()]; }
  double x(std::size_t i, std::size_t j) const { return data_[i * width() + 1 + j]; }
  std::span<const double> inputs(std::size_t i) const {
    return {data_.data() + i * width() + 1, static_cast<std::size_t>(dim_)};
  }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * width(), width()};
  }
  /// Column 0 is the target, columns 1..d the inputs.
  double at(std::size_t i, std::size_t col) const { return data_[i * width() + col]; }

 private:
  std::size_t width() const { return static_cast<std::size_t>(dim_) + 1; }
  std::vector<double> data_;
  int dim_ = 0;
};

/// Parse the wire format: a JSON array of numeric arrays, target first.
inline DataTable parse_table(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DatasetError(std::string("malformed syntax: ") + e.what());
  }
  if (!doc.is_array()) throw DatasetError("expected a top-level array of rows");
  std::vector<std::vector<double>> rows;
  rows.reserve(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& row = doc[i];
    if (!row.is_array())
      throw DatasetError("row " + std::to_string(i) + ": expected an array");
    std::vector<double> values;
    values.reserve(row.size());
    for (const auto& v : row) {
      if (!v.is_number())
        throw DatasetError("row " + std::to_string(i) + ": non-numeric entry");
      values.push_back(v.get<double>());
    }
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw DatasetError("table must have at least one row");
  const std::size_t width = rows.front().size();
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i].size() != width)
      throw DatasetError("row " + std::to_string(i) + ": ragged row (expected " +
                         std::to_string(width) + " values, got " +
                         std::to_string(rows[i].size()) + ")");
  return DataTable::from_rows(rows);
}

/// Inverse of parse_table; decimal rendering is shortest-round-trip, so a
/// serialize/parse cycle is bit exact.
inline std::string serialize_table(const DataTable& table) {
  std::string out = "[";
  for (std::size_t i = 0; i < table.rows(); ++i) {
    if (i) out += ',';
    out += '[';
    const auto row = table.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out += ',';
      out += detail::double_to_text(row[j]);
    }
    out += ']';
  }
  out += ']';
  return out;
}

namespace detail {
// Box-Muller over mt19937_64 draws; deterministic across standard libraries.
inline double standard_normal(std::mt19937_64& rng) {
  const double u1 = (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
  const double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;          // [0, 1)
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}
}  // namespace detail

/// Multiplicative relative noise: targets become y*(1 + eps) with
/// eps ~ N(0, sigma^2); inputs are untouched and sigma = 0 returns an
/// identical table.
inline DataTable inject_noise(const DataTable& table, double sigma, std::uint64_t seed) {
  if (sigma < 0) throw DatasetError("noise sigma must be nonnegative");
  if (sigma == 0) return table;
  std::mt19937_64 rng(seed);
  std::vector<double> data;
  data.reserve(table.rows() * (static_cast<std::size_t>(table.dim()) + 1));
  for (std::size_t i = 0; i < table.rows(); ++i) {
    const double eps = detail::standard_normal(rng) * sigma;
    data.push_back(table.y(i) * (1.0 + eps));
    for (double v : table.inputs(i)) data.push_back(v);
  }
  return DataTable::from_flat(std::move(data), table.dim());
}

struct ColumnStats {
  double mean = 0.0;
  double stddev = 0.0;  // population convention
  double min = 0.0;
  double max = 0.0;
  double fraction_zero = 0.0;
};

struct StatsSummary {
  std::vector<ColumnStats> columns;        // target first, then inputs
  std::vector<double> correlation;         // (d+1) x (d+1), row-major
  std::size_t column_count() const { return columns.size(); }
  double corr(std::size_t a, std::size_t b) const { return correlation[a * columns.size() + b]; }
};

/// Per-column summary plus the pairwise Pearson matrix. A constant column
/// correlates 0 with everything, itself included.
inline StatsSummary column_stats(const DataTable& table) {
  const std::size_t cols = static_cast<std::size_t>(table.dim()) + 1;
  const std::size_t n = table.rows();
  StatsSummary s;
  s.columns.resize(cols);
  for (std::size_t c = 0; c < cols; ++c) {
    double sum = 0.0, mn = table.at(0, c), mx = table.at(0, c);
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = table.at(i, c);
      sum += v;
      mn = std::min(mn, v);
      mx = std::max(mx, v);
      if (v == 0.0) ++zeros;
    }
    const double mean = sum / static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = table.at(i, c) - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    s.columns[c] = {mean, std::sqrt(var), mn, mx,
                    static_cast<double>(zeros) / static_cast<double>(n)};
  }
  s.correlation.assign(cols * cols, 0.0);
  for (std::size_t a = 0; a < cols; ++a) {
    for (std::size_t b = a; b < cols; ++b) {
      double r = 0.0;
      if (a == b) {
        r = s.columns[a].stddev > 0.0 ? 1.0 : 0.0;
      } else if (s.columns[a].stddev > 0.0 && s.columns[b].stddev > 0.0) {
        double cov = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          cov += (table.at(i, a) - s.columns[a].mean) * (table.at(i, b) - s.columns[b].mean);
        cov /= static_cast<double>(n);
        r = std::clamp(cov / (s.columns[a].stddev * s.columns[b].stddev), -1.0, 1.0);
      }
      s.correlation[a * cols + b] = r;
      s.correlation[b * cols + a] = r;
    }
  }
  return s;
}

enum class Domain { Physics, Chemistry, Biology, MaterialScience, Other };

inline std::string domain_to_string(Domain d) {
  switch (d) {
    case Domain::Physics: return "physics";
    case Domain::Chemistry: return "chemistry";
    case Domain::Biology: return "biology";
    case Domain::MaterialScience: return "material_science";
    case Domain::Other: return "other";
  }
  return "other";
}

inline Domain domain_from_string(const std::string& s) {
  if (s == "physics") return Domain::Physics;
  if (s == "chemistry") return Domain::Chemistry;
  if (s == "biology") return Domain::Biology;
  if (s == "material_science") return Domain::MaterialScience;
  if (s == "other") return Domain::Other;
  throw DatasetError("unknown domain '" + s + "'");
}

struct VariableInfo {
  std::string name;
  std::string description;
};

/// Reference solution carried by synthesized problems: the skeleton text
/// (constants as params[i]) and the true parameter values.
struct GroundTruth {
  std::string skeleton;
  std::array<double, kMaxParams> params{};
};

struct Problem {
  std::string id;
  Domain domain = Domain::Other;
  std::string target_name;
  std::string target_description;
  std::vector<VariableInfo> variables;
  DataTable train, test_id, test_ood;
  std::optional<GroundTruth> ground_truth;

  std::vector<std::string> variable_names() const {
    std::vector<std::string> names;
    names.reserve(variables.size());
    for (const auto& v : variables) names.push_back(v.name);
    return names;
  }

  void validate() const {
    if (variables.empty()) throw DatasetError("problem needs at least one variable");
    for (std::size_t i = 0; i < variables.size(); ++i) {
      if (variables[i].name.empty())
        throw DatasetError("variable " + std::to_string(i) + " has an empty name");
      for (std::size_t j = i + 1; j < variables.size(); ++j)
        if (variables[i].name == variables[j].name)
          throw DatasetError("duplicate variable name '" + variables[i].name + "'");
    }
    const int d = static_cast<int>(variables.size());
    for (const auto* t : {&train, &test_id, &test_ood})
      if (t->dim() != d)
        throw DatasetError("table column count " + std::to_string(t->dim() + 1) +
                           " does not match 1 + " + std::to_string(d) + " variables");
  }
};

inline DataTable load_table_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open data file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_table(buf.str());
}

/// Load a problem manifest: {id, domain, target_name, target_description,
/// variables:[{name, description}], files:{train, test_id, test_ood}} with
/// table paths resolved relative to the manifest.
inline Problem load_problem(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw DatasetError("cannot open manifest " + manifest_path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DatasetError("manifest " + manifest_path.string() + ": " + e.what());
  }
  Problem p;
  try {
    p.id = doc.at("id").get<std::string>();
    p.domain = domain_from_string(doc.at("domain").get<std::string>());
    p.target_name = doc.at("target_name").get<std::string>();
    p.target_description = doc.at("target_description").get<std::string>();
    for (const auto& v : doc.at("variables"))
      p.variables.push_back({v.at("name").get<std::string>(),
                             v.value("description", std::string{})});
    const auto& files = doc.at("files");
    const auto base = manifest_path.parent_path();
    p.train = load_table_file(base / files.at("train").get<std::string>());
    p.test_id = load_table_file(base / files.at("test_id").get<std::string>());
    p.test_ood = load_table_file(base / files.at("test_ood").get<std::string>());
    if (doc.contains("ground_truth")) {
      GroundTruth gt;
      gt.skeleton = doc["ground_truth"].at("skeleton").get<std::string>();
      gt.params.fill(1.0);
      if (doc["ground_truth"].contains("params")) {
        const auto& arr = doc["ground_truth"]["params"];
        for (std::size_t i = 0; i < arr.size() && i < gt.params.size(); ++i)
          gt.params[i] = arr[i].get<double>();
      }
      p.ground_truth = std::move(gt);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError("manifest " + manifest_path.string() + ": " + e.what());
  }
  p.validate();
  return p;
}

}  // namespace symreg
