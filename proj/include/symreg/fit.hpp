#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "symreg/dataset.hpp"
#include "symreg/expr.hpp"
#include "symreg/metrics.hpp"

namespace symreg {

struct FitConfig {
  int max_iterations = 200;
  double gradient_tolerance = 1e-8;  // infinity norm
  double armijo_c1 = 1e-4;
  double wolfe_c2 = 0.9;
  double backtrack_factor = 0.5;
  double param_init = 1.0;
  // extra seeded starts beyond the deterministic all-init one; off by
  // default to match the single-start evaluator semantics
  int random_restarts = 0;
  std::uint64_t restart_seed = 0;
};

struct BfgsResult {
  std::vector<double> x;
  double f = 0.0;
  bool converged = false;
  int iterations = 0;
  std::string failure_reason;  // empty on clean termination
};

using Objective = std::function<double(std::span<const double>)>;
using Gradient = std::function<std::vector<double>(std::span<const double>)>;

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double inf_norm(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

struct LineSearchResult {
  bool ok = false;
  double alpha = 0.0;
  double f = 0.0;
  std::vector<double> g;
  bool curvature_ok = false;
};

// Strong Wolfe line search: bracketing stage doubling the trial step, then
// bisection zoom (the 0.5 backtracking factor). Non-finite trial values are
// treated as overshoot. Falls back to the best Armijo point seen when the
// curvature condition cannot be met in the budget.
inline LineSearchResult wolfe_line_search(const Objective& f, const Gradient& g,
                                          std::span<const double> x, std::span<const double> p,
                                          double f0, double dphi0, const FitConfig& cfg) {
  const std::size_t k = x.size();
  std::vector<double> trial(k);
  const auto phi = [&](double a) {
    for (std::size_t i = 0; i < k; ++i) trial[i] = x[i] + a * p[i];
    return f(trial);
  };
  const auto dphi = [&](double a, std::vector<double>& grad_out) {
    for (std::size_t i = 0; i < k; ++i) trial[i] = x[i] + a * p[i];
    grad_out = g(trial);
    return dot(grad_out, p);
  };

  LineSearchResult best;  // best Armijo-satisfying point so far
  const auto note_best = [&](double a, double fa) {
    if (!best.ok || fa < best.f) {
      best.ok = true;
      best.alpha = a;
      best.f = fa;
      best.curvature_ok = false;
    }
  };

  const double c1 = cfg.armijo_c1, c2 = cfg.wolfe_c2;
  const double grow = 1.0 / cfg.backtrack_factor;
  std::vector<double> grad;

  double a_prev = 0.0, f_prev = f0;
  double a = 1.0;
  double lo = 0.0, hi = 0.0, f_lo = f0;
  bool zooming = false;

  for (int iter = 0; iter < 64; ++iter) {
    if (!zooming) {
      const double fa = phi(a);
      const bool armijo = std::isfinite(fa) && fa <= f0 + c1 * a * dphi0;
      if (!armijo || (iter > 0 && fa >= f_prev)) {
        lo = a_prev;
        f_lo = f_prev;
        hi = a;
        zooming = true;
        continue;
      }
      note_best(a, fa);
      const double da = dphi(a, grad);
      if (std::isfinite(da) && std::abs(da) <= -c2 * dphi0) {
        return {true, a, fa, std::move(grad), true};
      }
      if (da >= 0) {
        lo = a;
        f_lo = fa;
        hi = a_prev;
        zooming = true;
        continue;
      }
      a_prev = a;
      f_prev = fa;
      a *= grow;
      if (a > 1e12) break;
    } else {
      const double mid = 0.5 * (lo + hi);
      if (std::abs(hi - lo) < 1e-16 * std::max(1.0, std::abs(lo))) break;
      const double fm = phi(mid);
      const bool armijo = std::isfinite(fm) && fm <= f0 + c1 * mid * dphi0;
      if (!armijo || fm >= f_lo) {
        hi = mid;
        continue;
      }
      note_best(mid, fm);
      const double dm = dphi(mid, grad);
      if (std::isfinite(dm) && std::abs(dm) <= -c2 * dphi0) {
        return {true, mid, fm, std::move(grad), true};
      }
      if (dm * (hi - lo) >= 0) hi = lo;
      lo = mid;
      f_lo = fm;
    }
  }

  if (best.ok) {
    // Armijo progress without curvature; caller skips the BFGS update.
    for (std::size_t i = 0; i < k; ++i) trial[i] = x[i] + best.alpha * p[i];
    best.g = g(trial);
    return best;
  }
  return {};
}

}  // namespace detail

/// BFGS with an inverse-Hessian approximation (identity start) and a strong
/// Wolfe line search. Terminates on the gradient infinity norm, the
/// iteration cap, or line-search failure; the returned objective value never
/// exceeds the starting one.
inline BfgsResult minimize_bfgs(const Objective& objective, const Gradient& gradient,
                                std::span<const double> x0, const FitConfig& cfg = {}) {
  const std::size_t k = x0.size();
  BfgsResult out;
  out.x.assign(x0.begin(), x0.end());
  out.f = objective(out.x);
  if (!std::isfinite(out.f)) {
    out.failure_reason = "non-finite objective at initial point";
    return out;
  }

  std::vector<double> g = gradient(out.x);
  bool grad_finite = true;
  for (double v : g) grad_finite = grad_finite && std::isfinite(v);
  if (!grad_finite) {
    out.failure_reason = "non-finite gradient at initial point";
    return out;
  }

  // inverse-Hessian approximation, row-major
  std::vector<double> H(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i) H[i * k + i] = 1.0;

  std::vector<double> p(k), s(k), y(k), Hy(k);
  bool first_step = true;

  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    out.iterations = iter;
    if (detail::inf_norm(g) <= cfg.gradient_tolerance) {
      out.converged = true;
      return out;
    }

    for (std::size_t i = 0; i < k; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < k; ++j) acc -= H[i * k + j] * g[j];
      p[i] = acc;
    }
    double dphi0 = detail::dot(p, g);
    if (!(dphi0 < 0)) {
      // lost positive definiteness; restart from steepest descent
      for (std::size_t i = 0; i < k * k; ++i) H[i] = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        H[i * k + i] = 1.0;
        p[i] = -g[i];
      }
      dphi0 = detail::dot(p, g);
      first_step = true;
    }

    const auto ls = detail::wolfe_line_search(objective, gradient, out.x, p, out.f, dphi0, cfg);
    if (!ls.ok) {
      out.failure_reason = "line search failed";
      return out;
    }

    for (std::size_t i = 0; i < k; ++i) {
      s[i] = ls.alpha * p[i];
      y[i] = ls.g[i] - g[i];
      out.x[i] += s[i];
    }
    out.f = ls.f;
    g = ls.g;

    const double sy = detail::dot(s, y);
    const double yy = detail::dot(y, y);
    if (sy > 1e-12 * std::sqrt(detail::dot(s, s)) * std::sqrt(yy)) {
      if (first_step && yy > 0) {
        const double scale = sy / yy;
        for (std::size_t i = 0; i < k * k; ++i) H[i] = 0.0;
        for (std::size_t i = 0; i < k; ++i) H[i * k + i] = scale;
        first_step = false;
      }
      const double rho = 1.0 / sy;
      for (std::size_t i = 0; i < k; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < k; ++j) acc += H[i * k + j] * y[j];
        Hy[i] = acc;
      }
      const double yHy = detail::dot(y, Hy);
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          H[i * k + j] += -rho * (Hy[i] * s[j] + s[i] * Hy[j]) +
                          rho * rho * yHy * s[i] * s[j] + rho * s[i] * s[j];
        }
      }
    }
  }

  out.iterations = cfg.max_iterations;
  if (detail::inf_norm(g) <= cfg.gradient_tolerance) {
    out.converged = true;
  } else {
    out.failure_reason = "iteration limit reached";
  }
  return out;
}

/// Outcome of fitting an equation skeleton to a table.
struct FitResult {
  std::array<double, kMaxParams> params{};
  Metrics metrics;
  bool converged = false;
  bool success_vs_goal = false;
  std::optional<std::string> failure_reason;
};

/// Optimize all parameter slots (init 1.0, whether referenced or not)
/// against the table, minimizing the MSE, then score the optimum. A
/// non-finite final MSE leaves the metrics undefined with a failure reason.
inline FitResult fit_constants(const Expr& expr, const DataTable& table, double goal,
                               const FitConfig& cfg = {}) {
  if (max_var_index(expr) >= table.dim())
    throw std::invalid_argument("expression references variable index " +
                                std::to_string(max_var_index(expr)) + " but table has " +
                                std::to_string(table.dim()) + " inputs");
  const std::size_t n = table.rows();

  const Objective objective = [&](std::span<const double> params) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = eval_row(expr, table.inputs(i), params) - table.y(i);
      acc += r * r;
    }
    return acc / static_cast<double>(n);
  };
  const Gradient gradient = [&](std::span<const double> params) {
    std::vector<double> g(kMaxParams, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const Dual d = eval_row_dual(expr, table.inputs(i), params);
      const double r = d.v - table.y(i);
      for (int j = 0; j < kMaxParams; ++j) g[static_cast<std::size_t>(j)] += r * d.d[static_cast<std::size_t>(j)];
    }
    for (double& v : g) v *= 2.0 / static_cast<double>(n);
    return g;
  };

  std::vector<double> x0(kMaxParams, cfg.param_init);
  BfgsResult opt = minimize_bfgs(objective, gradient, x0, cfg);
  if (cfg.random_restarts > 0) {
    std::mt19937_64 rng(cfg.restart_seed);
    for (int r = 0; r < cfg.random_restarts; ++r) {
      std::vector<double> start(kMaxParams);
      for (auto& v : start) v = cfg.param_init + detail::standard_normal(rng);
      BfgsResult candidate = minimize_bfgs(objective, gradient, start, cfg);
      const bool usable = std::isfinite(candidate.f);
      if (usable && (!std::isfinite(opt.f) || candidate.f < opt.f)) opt = std::move(candidate);
    }
  }

  FitResult out;
  std::copy(opt.x.begin(), opt.x.end(), out.params.begin());
  out.converged = opt.converged;

  std::vector<double> y(n), y_pred(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = table.y(i);
    y_pred[i] = eval_row(expr, table.inputs(i), out.params);
  }
  out.metrics = compute_metrics(y, y_pred);
  // failure_reason marks unscored results only; a rough optimizer exit with
  // finite metrics is still a scored (possibly poor) equation
  if (!out.metrics.mse) out.failure_reason = "NaN/Inf objective";
  out.success_vs_goal = out.metrics.mape.has_value() && *out.metrics.mape < goal;
  return out;
}

/// Batched prediction for a fitted parameter set.
inline std::vector<double> eval_batch(const Expr& expr, const DataTable& table,
                                      std::span<const double> params) {
  std::vector<double> out(table.rows());
  for (std::size_t i = 0; i < table.rows(); ++i) out[i] = eval_row(expr, table.inputs(i), params);
  return out;
}

/// Jacobian of predictions with respect to parameters, n rows by
/// kMaxParams columns (row-major). Unused parameters give zero columns.
inline std::vector<double> grad_params(const Expr& expr, const DataTable& table,
                                       std::span<const double> params) {
  std::vector<double> out(table.rows() * kMaxParams);
  for (std::size_t i = 0; i < table.rows(); ++i) {
    const Dual d = eval_row_dual(expr, table.inputs(i), params);
    for (int j = 0; j < kMaxParams; ++j)
      out[i * kMaxParams + static_cast<std::size_t>(j)] = d.d[static_cast<std::size_t>(j)];
  }
  return out;
}

}  // namespace symreg
