#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "cnode/ode.hpp"

namespace cnode::tasks {

// Inviscid transport u u_x + u_t = 0: along x(s) = f(x0) s + x0 the value
// u = f(x0) is constant.
struct BurgersDemo {
  std::function<double(double)> f;
  std::vector<double> x0;
  double horizon = 1.0;
};

struct Characteristic {
  double x0 = 0.0;
  double u = 0.0;
  std::vector<double> s;
  std::vector<double> x;
};

// Closed-form characteristic lines sampled at samples_per_curve points.
std::vector<Characteristic> burgers_characteristics(const BurgersDemo& demo,
                                                    int samples_per_curve);

// Integrates dx/ds = u, du/ds = 0 from (x0, u0); returns [x; u] at horizon.
Vec moc_endpoint(double x0, double u0, double horizon,
                 const solver::SolverConfig& cfg);

// Earliest positive intersection time over all pairs of characteristics,
// or nullopt when none cross.
std::optional<double> first_crossing(const BurgersDemo& demo);

}  // namespace cnode::tasks
