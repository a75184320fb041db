#include "cnode/adjoint.hpp"

namespace cnode::solver {

using diffcore::Tape;
using diffcore::Tensor;

Vec TapedDynamics::eval(double s, const Vec& y) const {
  Tape tape;
  const int yn = tape.leaf(Tensor::vector(y));
  const int th = tape.constant(Tensor::vector(params()));
  return tape.value(record(tape, s, yn, th)).data();
}

std::pair<Vec, Vec> TapedDynamics::vjp(double s, const Vec& y,
                                       const Vec& cot) const {
  Tape tape;
  const int yn = tape.leaf(Tensor::vector(y));
  const int th = tape.leaf(Tensor::vector(params()));
  const int out = record(tape, s, yn, th);
  const auto adj = tape.backward_seeded(out, cot);
  Vec gy = adj[yn].size() > 0 ? adj[yn] : Vec::Zero(y.size());
  Vec gt = adj[th].size() > 0 ? adj[th] : Vec::Zero(params().size());
  return {std::move(gy), std::move(gt)};
}

std::function<Vec(double, const Vec&)> TapedDynamics::as_ode() const {
  return [this](double s, const Vec& y) { return eval(s, y); };
}

GradientResult integrate_adjoint(const TapedDynamics& dyn, const Vec& y_final,
                                 double s0, double s1, const SolverConfig& cfg,
                                 const Vec& loss_grad) {
  const Index n = dyn.state_dim();
  const Index p = dyn.params().size();
  if (y_final.size() != n) {
    throw DimensionError("integrate_adjoint y_final", n, y_final.size());
  }
  if (loss_grad.size() != n) {
    throw DimensionError("integrate_adjoint loss_grad", n, loss_grad.size());
  }

  // Augmented state [y, a, g]: y retraces the trajectory, a carries the
  // state cotangent, g accumulates the parameter gradient quadrature.
  // One scratch tape per evaluation yields dy, a^T df/dy, and a^T df/dtheta
  // from a single recording of f.
  const Vec theta = dyn.params();
  auto f_aug = [&](double s, const Vec& z) {
    Tape tape;
    const int yn = tape.leaf(Tensor::vector(z.head(n)));
    const int th = tape.leaf(Tensor::vector(theta));
    const int out = dyn.record(tape, s, yn, th);
    const auto adj = tape.backward_seeded(out, z.segment(n, n));
    Vec dz = Vec::Zero(2 * n + p);
    dz.head(n) = tape.value(out).data();
    if (adj[yn].size() > 0) dz.segment(n, n) = -adj[yn];
    if (adj[th].size() > 0) dz.tail(p) = -adj[th];
    return dz;
  };

  Vec z1(2 * n + p);
  z1.head(n) = y_final;
  z1.segment(n, n) = loss_grad;
  z1.tail(p).setZero();

  OdeProblem prob{f_aug, std::move(z1), s1, s0};
  SolveResult sol = integrate(prob, cfg);

  GradientResult res;
  res.grad_y0 = sol.y.segment(n, n);
  res.grad_params = sol.y.tail(p);
  res.stats = sol.stats;
  return res;
}

GradientResult backprop_through_solver(const TapedDynamics& dyn, const Vec& y0,
                                       double s0, double s1,
                                       const SolverConfig& cfg,
                                       const Vec& loss_grad) {
  if (cfg.method == Method::kDopri5) {
    throw UnsupportedMethodError(
        "backprop_through_solver requires a fixed-step method");
  }
  const Index n = dyn.state_dim();
  if (y0.size() != n) {
    throw DimensionError("backprop_through_solver y0", n, y0.size());
  }
  if (loss_grad.size() != n) {
    throw DimensionError("backprop_through_solver loss_grad", n,
                         loss_grad.size());
  }
  const auto [steps, h_full] = fixed_grid(s0, s1, cfg.h);
  if (steps > cfg.max_steps) {
    throw NonconvergenceError("fixed-step count exceeds max_steps",
                              SolveStats{});
  }

  Tape tape;
  const int y0n = tape.leaf(Tensor::vector(y0));
  const int th = tape.leaf(Tensor::vector(dyn.params()));
  SolveStats stats;
  int y = y0n;
  double s = s0;
  for (long i = 0; i < steps; ++i) {
    const bool lastStep = (i == steps - 1);
    const double h = lastStep ? s1 - s : h_full;
    if (cfg.method == Method::kEuler) {
      const int k1 = dyn.record(tape, s, y, th);
      stats.nfe += 1;
      y = tape.add(y, tape.scale(k1, h));
    } else {
      const int k1 = dyn.record(tape, s, y, th);
      const int k2 = dyn.record(tape, s + 0.5 * h, tape.add(y, tape.scale(k1, 0.5 * h)), th);
      const int k3 = dyn.record(tape, s + 0.5 * h, tape.add(y, tape.scale(k2, 0.5 * h)), th);
      const int k4 = dyn.record(tape, s + h, tape.add(y, tape.scale(k3, h)), th);
      stats.nfe += 4;
      int acc = tape.add(k1, tape.scale(k2, 2.0));
      acc = tape.add(acc, tape.scale(k3, 2.0));
      acc = tape.add(acc, k4);
      y = tape.add(y, tape.scale(acc, h / 6.0));
    }
    if (!tape.value(y).all_finite()) {
      throw InstabilityError("non-finite state", s);
    }
    s = lastStep ? s1 : s + h_full;
    stats.steps_accepted += 1;
  }

  const auto adj = tape.backward_seeded(y, loss_grad);
  GradientResult res;
  res.grad_y0 = adj[y0n].size() > 0 ? adj[y0n] : Vec::Zero(n);
  res.grad_params = adj[th].size() > 0 ? adj[th] : Vec::Zero(dyn.params().size());
  res.stats = stats;
  return res;
}

}  // namespace cnode::solver
