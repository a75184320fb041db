#include "cnode/tasks/burgers.hpp"

#include <cmath>
#include <limits>

namespace cnode::tasks {

std::vector<Characteristic> burgers_characteristics(const BurgersDemo& demo,
                                                    int samples_per_curve) {
  if (!demo.f) throw ContractError("burgers_characteristics: missing profile");
  if (samples_per_curve < 2) {
    throw ContractError("burgers_characteristics: need at least two samples");
  }
  std::vector<Characteristic> curves;
  curves.reserve(demo.x0.size());
  for (double x0 : demo.x0) {
    const double u = demo.f(x0);
    if (!std::isfinite(u)) {
      throw ContractError("burgers_characteristics: profile not finite");
    }
    Characteristic c;
    c.x0 = x0;
    c.u = u;
    for (int j = 0; j < samples_per_curve; ++j) {
      const double s =
          demo.horizon * static_cast<double>(j) / (samples_per_curve - 1);
      c.s.push_back(s);
      c.x.push_back(u * s + x0);
    }
    curves.push_back(std::move(c));
  }
  return curves;
}

Vec moc_endpoint(double x0, double u0, double horizon,
                 const solver::SolverConfig& cfg) {
  Vec y0(2);
  y0 << x0, u0;
  auto rates = [](double, const Vec& y) {
    Vec dy(2);
    dy << y[1], 0.0;
    return dy;
  };
  return solver::integrate({rates, y0, 0.0, horizon}, cfg).y;
}

std::optional<double> first_crossing(const BurgersDemo& demo) {
  if (!demo.f) throw ContractError("first_crossing: missing profile");
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < demo.x0.size(); ++i) {
    for (std::size_t j = i + 1; j < demo.x0.size(); ++j) {
      const double a = demo.x0[i];
      const double b = demo.x0[j];
      const double slope_gap = demo.f(a) - demo.f(b);
      if (slope_gap == 0.0) continue;
      const double s = (b - a) / slope_gap;
      if (s > 0.0 && s < best) best = s;
    }
  }
  if (!std::isfinite(best)) return std::nullopt;
  return best;
}

}  // namespace cnode::tasks
