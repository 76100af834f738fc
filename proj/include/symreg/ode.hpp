#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "symreg/expr.hpp"

namespace symreg {

class IntegrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// First-order system y' = f(y, t). Right-hand sides are expressions over
/// the state variables (indices 0..m-1) followed by time (index m), with no
/// tunable parameters left in them.
struct OdeSpec {
  std::vector<std::string> state_names;
  std::vector<Expr> rhs;  // one per state
  std::vector<double> initial_state;
  double t_begin = 0.0;
  double t_end = 60.0;
  int samples = 5000;

  void validate() const {
    if (rhs.size() != state_names.size() || rhs.size() != initial_state.size() || rhs.empty())
      throw IntegrationError("state names, right-hand sides and initial state must align");
    if (!(t_begin < t_end)) throw IntegrationError("time span must have t_begin < t_end");
    if (samples < 2) throw IntegrationError("need at least 2 samples");
    for (const auto& e : rhs) {
      if (param_count(e) > 0)
        throw IntegrationError("right-hand side still contains tunable parameters");
      if (max_var_index(e) > static_cast<int>(state_names.size()))
        throw IntegrationError("right-hand side references an unknown variable");
    }
  }
};

struct OdeSolution {
  std::vector<double> times;                 // uniform over [t_begin, t_end]
  std::vector<std::vector<double>> states;   // one vector per sample
};

namespace detail {

// Dormand-Prince 5(4) tableau with the quartic dense-output polynomials.
struct Dopri5 {
  static constexpr std::array<double, 7> c{0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
  static constexpr std::array<std::array<double, 6>, 7> a{{
      {},
      {1.0 / 5},
      {3.0 / 40, 9.0 / 40},
      {44.0 / 45, -56.0 / 15, 32.0 / 9},
      {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
      {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
      {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
  }};
  static constexpr std::array<double, 7> b{35.0 / 384,     0.0,       500.0 / 1113, 125.0 / 192,
                                           -2187.0 / 6784, 11.0 / 84, 0.0};
  // difference between the 5th- and embedded 4th-order weights
  static constexpr std::array<double, 7> e{71.0 / 57600,       0.0,        -71.0 / 16695,
                                           71.0 / 1920,        -17253.0 / 339200,
                                           22.0 / 525,         -1.0 / 40};
  // dense output: y(t0 + u*h) = y0 + h * sum_s K_s * sum_j p[s][j] * u^(j+1)
  static constexpr std::array<std::array<double, 4>, 7> p{{
      {1.0, -8048581381.0 / 2820520608.0, 8663915743.0 / 2820520608.0,
       -12715105075.0 / 11282082432.0},
      {0.0, 0.0, 0.0, 0.0},
      {0.0, 131558114200.0 / 32700410799.0, -68118460800.0 / 10900136933.0,
       87487479700.0 / 32700410799.0},
      {0.0, -1754552775.0 / 470086768.0, 14199869525.0 / 1410260304.0,
       -10690763975.0 / 1880347072.0},
      {0.0, 127303824393.0 / 49829197408.0, -318862633887.0 / 49829197408.0,
       701980252875.0 / 199316789632.0},
      {0.0, -282668133.0 / 205662961.0, 2019193451.0 / 616988883.0,
       -1453857185.0 / 822651844.0},
      {0.0, 40617522.0 / 29380423.0, -110615467.0 / 29380423.0, 69997945.0 / 29380423.0},
  }};
};

inline double rms(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc / static_cast<double>(v.size()));
}

}  // namespace detail

/// Adaptive Dormand-Prince 5(4) integration with mixed-norm step acceptance
/// (err <= 1 against atol + rtol*|y|) and quartic dense output at uniformly
/// spaced sample times. Step-size underflow or a non-finite state aborts the
/// problem with IntegrationError.
inline OdeSolution integrate_rk45(const OdeSpec& spec, double rtol = 1e-6, double atol = 1e-9) {
  spec.validate();
  using T = detail::Dopri5;
  const std::size_t m = spec.rhs.size();
  const std::array<double, kMaxParams> no_params{};

  std::vector<double> vars(m + 1);  // states then time
  const auto eval_rhs = [&](double t, const std::vector<double>& y, std::vector<double>& out) {
    for (std::size_t i = 0; i < m; ++i) vars[i] = y[i];
    vars[m] = t;
    for (std::size_t i = 0; i < m; ++i) out[i] = eval_row(spec.rhs[i], vars, no_params);
  };
  const auto finite = [](const std::vector<double>& v) {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  };

  double t = spec.t_begin;
  std::vector<double> y = spec.initial_state;
  std::vector<double> f0(m);
  eval_rhs(t, y, f0);
  if (!finite(y) || !finite(f0))
    throw IntegrationError("non-finite state or derivative at the initial condition");

  // initial step size heuristic on the local scale, capped by the span
  const auto scaled_rms = [&](const std::vector<double>& v, const std::vector<double>& ref) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double scale = atol + std::abs(ref[i]) * rtol;
      const double r = v[i] / scale;
      acc += r * r;
    }
    return std::sqrt(acc / static_cast<double>(m));
  };
  double h;
  {
    const double d0 = scaled_rms(y, y);
    const double d1 = scaled_rms(f0, y);
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    std::vector<double> y1(m), f1(m), df(m);
    for (std::size_t i = 0; i < m; ++i) y1[i] = y[i] + h0 * f0[i];
    eval_rhs(t + h0, y1, f1);
    for (std::size_t i = 0; i < m; ++i) df[i] = f1[i] - f0[i];
    const double d2 = scaled_rms(df, y) / h0;
    double h1;
    if (d1 <= 1e-15 && d2 <= 1e-15)
      h1 = std::max(1e-6, h0 * 1e-3);
    else
      h1 = std::pow(0.01 / std::max(d1, d2), 0.2);
    h = std::min({100.0 * h0, h1, spec.t_end - spec.t_begin});
  }

  // uniform output grid, both endpoints included
  OdeSolution sol;
  sol.times.resize(static_cast<std::size_t>(spec.samples));
  const double dt_out = (spec.t_end - spec.t_begin) / static_cast<double>(spec.samples - 1);
  for (int k = 0; k < spec.samples; ++k)
    sol.times[static_cast<std::size_t>(k)] = spec.t_begin + dt_out * k;
  sol.times.back() = spec.t_end;
  sol.states.resize(sol.times.size());
  std::size_t next_out = 0;
  sol.states[next_out++] = y;

  constexpr double kSafety = 0.9, kMinFactor = 0.2, kMaxFactor = 10.0;
  std::vector<std::vector<double>> K(7, std::vector<double>(m));
  std::vector<double> y_stage(m), y_new(m), err_vec(m);
  K[0] = f0;

  long steps = 0;
  while (t < spec.t_end && next_out < sol.times.size()) {
    if (++steps > 10'000'000) throw IntegrationError("step budget exhausted");
    h = std::min(h, spec.t_end - t);
    if (h < 1e-14 * std::max(1.0, std::abs(t)))
      throw IntegrationError("step size underflow at t=" + std::to_string(t));

    for (std::size_t s = 1; s < 7; ++s) {
      for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t q = 0; q < s; ++q) acc += T::a[s][q] * K[q][i];
        y_stage[i] = y[i] + h * acc;
      }
      eval_rhs(t + T::c[s] * h, y_stage, K[s]);
    }
    for (std::size_t i = 0; i < m; ++i) {
      double acc = 0.0, eacc = 0.0;
      for (std::size_t s = 0; s < 7; ++s) {
        acc += T::b[s] * K[s][i];
        eacc += T::e[s] * K[s][i];
      }
      y_new[i] = y[i] + h * acc;
      err_vec[i] = h * eacc;
    }

    double err;
    if (!finite(y_new) || !finite(K[6])) {
      err = std::numeric_limits<double>::infinity();
    } else {
      double acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double scale = atol + rtol * std::max(std::abs(y[i]), std::abs(y_new[i]));
        const double r = err_vec[i] / scale;
        acc += r * r;
      }
      err = std::sqrt(acc / static_cast<double>(m));
    }

    if (err < 1.0) {
      // dense output for every sample that falls inside this step; snap to
      // the span end so rounding in t + h cannot strand the last sample
      double t_new = t + h;
      if (spec.t_end - t_new < 1e-12 * (spec.t_end - spec.t_begin)) t_new = spec.t_end;
      while (next_out < sol.times.size() && sol.times[next_out] <= t_new) {
        const double u = (sol.times[next_out] - t) / h;
        std::vector<double> yi(m);
        for (std::size_t i = 0; i < m; ++i) {
          double acc = 0.0;
          for (std::size_t s = 0; s < 7; ++s) {
            double poly = 0.0;
            double upow = u;
            for (int j = 0; j < 4; ++j) {
              poly += T::p[s][static_cast<std::size_t>(j)] * upow;
              upow *= u;
            }
            acc += K[s][i] * poly;
          }
          yi[i] = y[i] + h * acc;
        }
        sol.states[next_out++] = std::move(yi);
      }
      t = t_new;
      y = y_new;
      K[0] = K[6];  // FSAL
      const double factor =
          err == 0.0 ? kMaxFactor
                     : std::min(kMaxFactor, std::max(1.0, kSafety * std::pow(err, -0.2)));
      h *= factor;
    } else {
      h *= std::max(kMinFactor,
                    std::isfinite(err) ? kSafety * std::pow(err, -0.2) : kMinFactor);
    }
  }

  if (next_out < sol.times.size())
    throw IntegrationError("integration ended before covering the sample grid");
  return sol;
}

}  // namespace symreg
