#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "symreg/ode.hpp"
#include "symreg/parser.hpp"

using namespace symreg;

namespace {
OdeSpec decay_spec(double t_end = 1.0, int samples = 101) {
  OdeSpec spec;
  spec.state_names = {"y"};
  spec.rhs = {parse_expression("-y", std::vector<std::string>{"y", "t"})};
  spec.initial_state = {1.0};
  spec.t_begin = 0.0;
  spec.t_end = t_end;
  spec.samples = samples;
  return spec;
}

OdeSpec oscillator_spec() {
  const std::vector<std::string> vars{"x", "v", "t"};
  OdeSpec spec;
  spec.state_names = {"x", "v"};
  spec.rhs = {parse_expression("v", vars), parse_expression("-x", vars)};
  spec.initial_state = {1.0, 0.0};
  spec.t_begin = 0.0;
  spec.t_end = 60.0;
  spec.samples = 5000;
  return spec;
}
}  // namespace

TEST_CASE("exponential decay hits the analytic endpoint", "[ode]") {
  const OdeSolution sol = integrate_rk45(decay_spec());
  REQUIRE(sol.times.size() == 101);
  REQUIRE(sol.times.front() == 0.0);
  REQUIRE(sol.times.back() == 1.0);
  REQUIRE(std::abs(sol.states.back()[0] - std::exp(-1.0)) <= 1e-6);
  // dense samples track the analytic curve too
  for (std::size_t k = 0; k < sol.times.size(); ++k)
    REQUIRE(std::abs(sol.states[k][0] - std::exp(-sol.times[k])) <= 1e-6);
}

TEST_CASE("harmonic oscillator conserves energy to tolerance", "[ode][slow]") {
  const OdeSolution sol = integrate_rk45(oscillator_spec());
  REQUIRE(sol.times.size() == 5000);
  double drift = 0.0;
  for (std::size_t k = 0; k < sol.times.size(); ++k) {
    const double x = sol.states[k][0], v = sol.states[k][1];
    drift = std::max(drift, std::abs(0.5 * (x * x + v * v) - 0.5));
  }
  REQUIRE(drift <= 1e-5);
}

TEST_CASE("zero derivative keeps the trajectory exactly constant", "[ode]") {
  OdeSpec spec;
  spec.state_names = {"y"};
  spec.rhs = {parse_expression("0", std::vector<std::string>{"y", "t"})};
  spec.initial_state = {3.5};
  spec.t_begin = 0.0;
  spec.t_end = 10.0;
  spec.samples = 50;
  const OdeSolution sol = integrate_rk45(spec);
  for (const auto& state : sol.states) REQUIRE(state[0] == 3.5);
}

TEST_CASE("tightening tolerances improves the endpoint", "[ode]") {
  const double loose = std::abs(integrate_rk45(decay_spec(), 1e-6, 1e-9).states.back()[0] -
                                std::exp(-1.0));
  const double tight = std::abs(integrate_rk45(decay_spec(), 5e-7, 5e-10).states.back()[0] -
                                std::exp(-1.0));
  REQUIRE(tight < loose);
}

TEST_CASE("a blow-up problem aborts instead of emitting garbage", "[ode]") {
  OdeSpec spec;
  spec.state_names = {"y"};
  spec.rhs = {parse_expression("y**2", std::vector<std::string>{"y", "t"})};
  spec.initial_state = {1.0};  // diverges at t = 1
  spec.t_begin = 0.0;
  spec.t_end = 60.0;
  spec.samples = 100;
  REQUIRE_THROWS_AS(integrate_rk45(spec), IntegrationError);
}

TEST_CASE("spec validation rejects bad shapes", "[ode]") {
  OdeSpec spec = decay_spec();
  spec.initial_state = {1.0, 2.0};
  REQUIRE_THROWS_AS(integrate_rk45(spec), IntegrationError);
  spec = decay_spec();
  spec.t_end = spec.t_begin;
  REQUIRE_THROWS_AS(integrate_rk45(spec), IntegrationError);
  spec = decay_spec();
  spec.rhs = {parse_expression("-params[0]*y", std::vector<std::string>{"y", "t"})};
  REQUIRE_THROWS_AS(integrate_rk45(spec), IntegrationError);
}

TEST_CASE("forced system visits time in the right-hand side", "[ode]") {
  // y' = cos(t), y(0) = 0 has solution sin(t)
  OdeSpec spec;
  spec.state_names = {"y"};
  spec.rhs = {parse_expression("cos(t)", std::vector<std::string>{"y", "t"})};
  spec.initial_state = {0.0};
  spec.t_begin = 0.0;
  spec.t_end = 6.0;
  spec.samples = 61;
  const OdeSolution sol = integrate_rk45(spec);
  for (std::size_t k = 0; k < sol.times.size(); ++k)
    REQUIRE(std::abs(sol.states[k][0] - std::sin(sol.times[k])) <= 5e-6);
}
