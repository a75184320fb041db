#pragma once

#include <functional>
#include <string>
#include <utility>

#include "cnode/common.hpp"

namespace cnode::solver {

enum class Method { kEuler, kRk4, kDopri5 };

Method parse_method(const std::string& name);
std::string method_name(Method m);

struct SolverConfig {
  Method method = Method::kDopri5;
  double h = 0.01;      // fixed-step size for euler / rk4
  double rtol = 1e-6;   // adaptive tolerances for dopri5
  double atol = 1e-8;
  long max_steps = 1000000;
};

struct SolveStats {
  long nfe = 0;
  long steps_accepted = 0;
  long steps_rejected = 0;
};

struct NonconvergenceError : Error {
  NonconvergenceError(const std::string& msg, SolveStats partial)
      : Error(msg), stats(partial) {}
  SolveStats stats;
};

struct OdeProblem {
  std::function<Vec(double, const Vec&)> f;
  Vec y0;
  double s0 = 0.0;
  double s1 = 1.0;
};

struct SolveResult {
  Vec y;
  SolveStats stats;
};

// Fixed-step grid: full steps of size h, last step shortened to land exactly
// on s1. Returns (step count, signed full step). Handles descending spans.
std::pair<long, double> fixed_grid(double s0, double s1, double h);

SolveResult integrate(const OdeProblem& problem, const SolverConfig& cfg);

}  // namespace cnode::solver
