#pragma once

#include <memory>
#include <utility>

#include "cnode/mlp.hpp"
#include "cnode/ode.hpp"
#include "cnode/tape.hpp"

namespace cnode::solver {

// Dynamics that can record themselves on a tape. record() is the single
// source of truth: plain evaluation and vector-Jacobian products are both
// derived from it, so the three can never drift apart.
class TapedDynamics {
 public:
  virtual ~TapedDynamics() = default;

  virtual Index state_dim() const = 0;
  virtual const Vec& params() const = 0;

  // Appends f(s, y) to the tape given leaf/constant nodes for y and the
  // parameter vector; returns the output node id.
  virtual int record(diffcore::Tape& tape, double s, int y, int theta) const = 0;

  Vec eval(double s, const Vec& y) const;

  // Pullback of `cot` through f(s, y): returns (cot^T df/dy, cot^T df/dtheta).
  std::pair<Vec, Vec> vjp(double s, const Vec& y, const Vec& cot) const;

  // Adapter for the plain integrator.
  std::function<Vec(double, const Vec&)> as_ode() const;
};

struct GradientResult {
  Vec grad_params;
  Vec grad_y0;
  SolveStats stats;  // dynamics evaluations consumed by the gradient pass
};

// Continuous adjoint: integrates state, adjoint, and parameter quadrature
// jointly backward from s1 to s0, starting from the already-computed final
// state. Memory use does not grow with step count: each dynamics evaluation
// records one scratch tape and frees it before the next.
GradientResult integrate_adjoint(const TapedDynamics& dyn, const Vec& y_final,
                                 double s0, double s1, const SolverConfig& cfg,
                                 const Vec& loss_grad);

// Discrete alternative: re-runs the fixed-step solve as one tape and
// backpropagates through every arithmetic step. Exact gradient of the
// discrete map; memory grows linearly with step count. Fixed-step methods
// only; dopri5 raises UnsupportedMethodError.
GradientResult backprop_through_solver(const TapedDynamics& dyn, const Vec& y0,
                                       double s0, double s1,
                                       const SolverConfig& cfg,
                                       const Vec& loss_grad);

// Autonomous dynamics f(y) given by a feedforward net with matching input
// and output width.
class MlpDynamics : public TapedDynamics {
 public:
  MlpDynamics(diffcore::MlpSpec spec, Vec params)
      : spec_(std::move(spec)), params_(std::move(params)) {
    spec_.validate();
    if (spec_.in_dim() != spec_.out_dim()) {
      throw ContractError("MlpDynamics: net must map states to states");
    }
    if (params_.size() != spec_.param_count()) {
      throw DimensionError("MlpDynamics params", spec_.param_count(),
                           params_.size());
    }
  }

  Index state_dim() const override { return spec_.in_dim(); }
  const Vec& params() const override { return params_; }
  Vec& mutable_params() { return params_; }

  int record(diffcore::Tape& tape, double /*s*/, int y, int theta) const override {
    return mlp_forward(tape, spec_, theta, y);
  }

 private:
  diffcore::MlpSpec spec_;
  Vec params_;
};

}  // namespace cnode::solver
