#include "cnode/ode.hpp"

#include <algorithm>
#include <cmath>

namespace cnode::solver {

namespace {

// Dormand-Prince 5(4) coefficients.
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                 a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                 b5 = -2187.0 / 6784, b6 = 11.0 / 84;
// Error weights: fifth-order weights minus the embedded fourth-order ones.
constexpr double e1 = b1 - 5179.0 / 57600, e3 = b3 - 7571.0 / 16695,
                 e4 = b4 - 393.0 / 640, e5 = b5 + 92097.0 / 339200,
                 e6 = b6 - 187.0 / 2100, e7 = -1.0 / 40;

constexpr double kSafety = 0.9;
constexpr double kMinFactor = 0.2;
constexpr double kMaxFactor = 5.0;
constexpr double kErrExponent = 0.2;  // 1/(order of the embedded pair)

void check_finite(const Vec& v, const char* what, double s) {
  if (!v.allFinite()) {
    throw InstabilityError(std::string("non-finite ") + what, s);
  }
}

double error_norm(const Vec& err, const Vec& y0, const Vec& y1, double atol,
                  double rtol) {
  double acc = 0.0;
  for (Index i = 0; i < err.size(); ++i) {
    const double sc = atol + rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
    const double q = err[i] / sc;
    acc += q * q;
  }
  return std::sqrt(acc / static_cast<double>(err.size()));
}

double rms_scaled(const Vec& v, const Vec& scale) {
  double acc = 0.0;
  for (Index i = 0; i < v.size(); ++i) {
    const double q = v[i] / scale[i];
    acc += q * q;
  }
  return std::sqrt(acc / static_cast<double>(v.size()));
}

// Starting step heuristic: measures the local scale of y and f, trials one
// explicit Euler step, and bounds the result by the span. Costs one extra
// dynamics evaluation (f0 is reused as the first stage).
double initial_step(const OdeProblem& p, const Vec& f0, double dir,
                    const SolverConfig& cfg, SolveStats& stats) {
  const double span = std::abs(p.s1 - p.s0);
  Vec scale(p.y0.size());
  for (Index i = 0; i < p.y0.size(); ++i) {
    scale[i] = cfg.atol + cfg.rtol * std::abs(p.y0[i]);
  }
  const double d0 = rms_scaled(p.y0, scale);
  const double d1 = rms_scaled(f0, scale);
  double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  h0 = std::min(h0, span);
  const Vec y1 = p.y0 + dir * h0 * f0;
  const Vec f1 = p.f(p.s0 + dir * h0, y1);
  stats.nfe += 1;
  check_finite(f1, "dynamics output", p.s0 + dir * h0);
  const double d2 = rms_scaled(f1 - f0, scale) / h0;
  const double dm = std::max(d1, d2);
  double h1 = dm <= 1e-15 ? std::max(1e-6, h0 * 1e-3)
                          : std::pow(0.01 / dm, kErrExponent);
  return std::min({100.0 * h0, h1, span});
}

SolveResult integrate_fixed(const OdeProblem& p, const SolverConfig& cfg) {
  const auto [n, h_full] = fixed_grid(p.s0, p.s1, cfg.h);
  if (n > cfg.max_steps) {
    throw NonconvergenceError("fixed-step count " + std::to_string(n) +
                                  " exceeds max_steps",
                              SolveStats{});
  }
  SolveStats stats;
  Vec y = p.y0;
  double s = p.s0;
  for (long i = 0; i < n; ++i) {
    const bool last = (i == n - 1);
    const double h = last ? p.s1 - s : h_full;
    if (cfg.method == Method::kEuler) {
      const Vec k1 = p.f(s, y);
      stats.nfe += 1;
      check_finite(k1, "dynamics output", s);
      Vec hk = h * k1;
      y = y + hk;
    } else {
      const Vec k1 = p.f(s, y);
      const Vec k2 = p.f(s + 0.5 * h, y + 0.5 * h * k1);
      const Vec k3 = p.f(s + 0.5 * h, y + 0.5 * h * k2);
      const Vec k4 = p.f(s + h, y + h * k3);
      stats.nfe += 4;
      check_finite(k4, "dynamics output", s + h);
      Vec acc = k1 + 2.0 * k2;
      acc += 2.0 * k3;
      acc += k4;
      y = y + (h / 6.0) * acc;
    }
    check_finite(y, "state", s);
    s = last ? p.s1 : s + h_full;
    stats.steps_accepted += 1;
  }
  return {std::move(y), stats};
}

SolveResult integrate_dopri5(const OdeProblem& p, const SolverConfig& cfg) {
  SolveStats stats;
  const double dir = (p.s1 >= p.s0) ? 1.0 : -1.0;
  const double span = std::abs(p.s1 - p.s0);
  if (span == 0.0) return {p.y0, stats};

  double s = p.s0;
  Vec y = p.y0;
  Vec k1 = p.f(s, y);
  stats.nfe += 1;
  check_finite(k1, "dynamics output", s);
  double h = initial_step(p, k1, dir, cfg, stats);

  while (dir * (p.s1 - s) > 0.0) {
    if (stats.steps_accepted + stats.steps_rejected >= cfg.max_steps) {
      throw NonconvergenceError("dopri5 exceeded max_steps", stats);
    }
    const double remaining = std::abs(p.s1 - s);
    const bool last = h >= remaining;
    if (last) h = remaining;
    if (h < 1e-14 * std::max(1.0, span)) {
      throw NonconvergenceError("dopri5 step size underflow", stats);
    }
    const double hd = dir * h;

    const Vec k2 = p.f(s + c2 * hd, y + hd * (a21 * k1));
    const Vec k3 = p.f(s + c3 * hd, y + hd * (a31 * k1 + a32 * k2));
    const Vec k4 = p.f(s + c4 * hd, y + hd * (a41 * k1 + a42 * k2 + a43 * k3));
    const Vec k5 =
        p.f(s + c5 * hd, y + hd * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    const Vec k6 = p.f(
        s + hd, y + hd * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    Vec y5 = y + hd * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    const Vec k7 = p.f(s + hd, y5);
    stats.nfe += 6;
    check_finite(k7, "dynamics output", s + hd);
    check_finite(y5, "state", s + hd);

    const Vec err = hd * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    const double norm = error_norm(err, y, y5, cfg.atol, cfg.rtol);

    double factor = norm <= 0.0
                        ? kMaxFactor
                        : kSafety * std::pow(1.0 / norm, kErrExponent);
    factor = std::clamp(factor, kMinFactor, kMaxFactor);

    if (norm <= 1.0) {
      s = last ? p.s1 : s + hd;
      y = std::move(y5);
      k1 = k7;
      stats.steps_accepted += 1;
    } else {
      stats.steps_rejected += 1;
    }
    h *= factor;
  }
  return {std::move(y), stats};
}

}  // namespace

Method parse_method(const std::string& name) {
  if (name == "euler") return Method::kEuler;
  if (name == "rk4") return Method::kRk4;
  if (name == "dopri5") return Method::kDopri5;
  throw ConfigError("unknown solver method '" + name + "'");
}

std::string method_name(Method m) {
  switch (m) {
    case Method::kEuler:
      return "euler";
    case Method::kRk4:
      return "rk4";
    case Method::kDopri5:
      return "dopri5";
  }
  return "?";
}

std::pair<long, double> fixed_grid(double s0, double s1, double h) {
  if (!(h > 0.0)) throw ContractError("fixed_grid: step size must be positive");
  const double span = std::abs(s1 - s0);
  if (span == 0.0) return {0, 0.0};
  const double q = span / h;
  long n = static_cast<long>(std::ceil(q - 1e-9));
  n = std::max<long>(n, 1);
  const double dir = (s1 >= s0) ? 1.0 : -1.0;
  return {n, dir * h};
}

SolveResult integrate(const OdeProblem& p, const SolverConfig& cfg) {
  if (p.y0.size() == 0) throw ContractError("integrate: empty initial state");
  if (!p.y0.allFinite()) throw InstabilityError("non-finite initial state", p.s0);
  switch (cfg.method) {
    case Method::kEuler:
    case Method::kRk4:
      return integrate_fixed(p, cfg);
    case Method::kDopri5:
      return integrate_dopri5(p, cfg);
  }
  throw ContractError("integrate: unknown method");
}

}  // namespace cnode::solver
