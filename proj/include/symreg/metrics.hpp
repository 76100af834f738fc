#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <vector>

#include "symreg/canonical.hpp"
#include "symreg/expr.hpp"

namespace symreg {

/// Tolerance under which a target counts as zero for relative-error metrics.
inline constexpr double kZeroTargetAtol = 1e-12;

/// numpy-style isclose(_, 0) tolerance used by the NMSE branch rules.
inline constexpr double kNmseZeroAtol = 1e-8;

struct Metrics {
  std::optional<double> mse;
  std::optional<double> nmse;
  std::optional<double> mape;
};

namespace detail {
inline void check_lengths(std::span<const double> y, std::span<const double> y_pred) {
  if (y.size() != y_pred.size()) throw std::invalid_argument("length mismatch");
  if (y.empty()) throw std::invalid_argument("empty inputs");
}
inline double population_variance(std::span<const double> y) {
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double var = 0.0;
  for (double v : y) var += (v - mean) * (v - mean);
  return var / static_cast<double>(y.size());
}
}  // namespace detail

/// Mean squared error; undefined when contaminated by non-finite predictions.
inline std::optional<double> mse(std::span<const double> y, std::span<const double> y_pred) {
  detail::check_lengths(y, y_pred);
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = y_pred[i] - y[i];
    acc += r * r;
  }
  const double v = acc / static_cast<double>(y.size());
  if (!std::isfinite(v)) return std::nullopt;
  return v;
}

/// MSE over population variance. Zero-variance targets follow the evaluator
/// convention: 0 when the MSE is (close to) zero, +inf otherwise.
inline std::optional<double> nmse(std::span<const double> y, std::span<const double> y_pred) {
  const auto m = mse(y, y_pred);
  if (!m) return std::nullopt;
  const double var = detail::population_variance(y);
  if (std::abs(var) <= kNmseZeroAtol) {
    if (std::abs(*m) <= kNmseZeroAtol) return 0.0;
    return std::numeric_limits<double>::infinity();
  }
  return *m / var;
}

/// Mean |y_pred - y| / |y| over rows with nonzero target (atol 1e-12).
/// Undefined when every target is zero or the mean is non-finite.
inline std::optional<double> mape(std::span<const double> y, std::span<const double> y_pred) {
  detail::check_lengths(y, y_pred);
  double acc = 0.0;
  std::size_t m = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (std::abs(y[i]) <= kZeroTargetAtol) continue;
    acc += std::abs((y_pred[i] - y[i]) / y[i]);
    ++m;
  }
  if (m == 0) return std::nullopt;
  const double v = acc / static_cast<double>(m);
  if (!std::isfinite(v)) return std::nullopt;
  return v;
}

inline Metrics compute_metrics(std::span<const double> y, std::span<const double> y_pred) {
  Metrics out;
  out.mse = mse(y, y_pred);
  if (out.mse) {
    out.nmse = nmse(y, y_pred);
    out.mape = mape(y, y_pred);
  }
  return out;
}

struct ToleranceConfig {
  double tau = 0.01;
  double discard_fraction = 0.05;  // in [0, 1)
};

/// Accuracy to tolerance: 1 iff, after masking zero targets and discarding
/// the floor(discard_fraction * m) largest relative errors, the worst
/// survivor is <= tau. Throws when every target is zero.
inline int acc_tolerance(std::span<const double> y, std::span<const double> y_pred,
                         const ToleranceConfig& config) {
  detail::check_lengths(y, y_pred);
  if (config.tau <= 0) throw std::invalid_argument("tau must be positive");
  if (config.discard_fraction < 0 || config.discard_fraction >= 1)
    throw std::invalid_argument("discard_fraction must be in [0, 1)");
  std::vector<double> errors;
  errors.reserve(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (std::abs(y[i]) <= kZeroTargetAtol) continue;
    const double e = std::abs((y_pred[i] - y[i]) / y[i]);
    errors.push_back(std::isfinite(e) ? e : std::numeric_limits<double>::infinity());
  }
  if (errors.empty()) throw std::invalid_argument("all targets are zero");
  std::sort(errors.begin(), errors.end());
  const auto discard = static_cast<std::size_t>(
      std::floor(config.discard_fraction * static_cast<double>(errors.size())));
  const double worst = errors[errors.size() - 1 - discard];
  return worst <= config.tau ? 1 : 0;
}

enum class MatchVerdict { Equivalent, NotEquivalent, Unknown };

namespace detail {
inline void collect_structure(const Expr& e, std::set<int>& vars,
                              std::map<UnaryOp, int>& unary_ops) {
  switch (e.kind()) {
    case NodeKind::Var: vars.insert(e.index()); break;
    case NodeKind::Unary:
      ++unary_ops[e.unary_op()];
      collect_structure(e.child(), vars, unary_ops);
      break;
    case NodeKind::Binary:
      collect_structure(e.lhs(), vars, unary_ops);
      collect_structure(e.rhs(), vars, unary_ops);
      break;
    default: break;
  }
}
}  // namespace detail

/// Deterministic first pass of symbolic-accuracy checking. Equivalent when
/// canonical skeletons coincide (parameters up to relabeling);
/// NotEquivalent when the used variable sets or unary-operator multisets of
/// the canonical forms differ; Unknown otherwise (candidate for a judge).
inline MatchVerdict symbolic_match(const Expr& pred, const Expr& truth) {
  const Expr a = canonicalize(pred).expr;
  const Expr b = canonicalize(truth).expr;
  if (detail::structural_equal(a, b)) return MatchVerdict::Equivalent;
  std::set<int> vars_a, vars_b;
  std::map<UnaryOp, int> ops_a, ops_b;
  detail::collect_structure(a, vars_a, ops_a);
  detail::collect_structure(b, vars_b, ops_b);
  if (vars_a != vars_b || ops_a != ops_b) return MatchVerdict::NotEquivalent;
  return MatchVerdict::Unknown;
}

/// Coefficient of determination. Debug aid only, not a headline metric.
inline std::optional<double> r_squared(std::span<const double> y,
                                       std::span<const double> y_pred) {
  const auto m = mse(y, y_pred);
  if (!m) return std::nullopt;
  const double var = detail::population_variance(y);
  if (var == 0.0) return std::nullopt;
  return 1.0 - *m / var;
}

}  // namespace symreg
