#pragma once

#include "cnode/param_vector.hpp"

namespace cnode::diffcore {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Vec m;
  Vec v;
  long t = 0;

  static AdamState init(Index n) { return {Vec::Zero(n), Vec::Zero(n), 0}; }
};

// One bias-corrected Adam update in place. Gradients are validated before any
// state is touched; a non-finite entry raises PoisonedGradientError naming
// the offending segment, leaving params and state unchanged.
inline void adam_step(ParamVector& params, const ParamVector& grad,
                      AdamState& state, const AdamConfig& cfg) {
  if (grad.size() != params.size()) {
    throw DimensionError("adam_step grad", params.size(), grad.size());
  }
  if (state.m.size() != params.size()) {
    throw DimensionError("adam_step state", params.size(), state.m.size());
  }
  if (!grad.values().allFinite()) {
    for (const auto& [name, seg] : grad.split()) {
      if (!seg.allFinite()) throw PoisonedGradientError(name);
    }
    throw PoisonedGradientError("(unnamed)");
  }
  const Vec& g = grad.values();
  state.t += 1;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g;
  state.v = cfg.beta2 * state.v.array().matrix() +
            (1.0 - cfg.beta2) * g.array().square().matrix();
  const double mc = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double vc = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  params.values().array() -=
      cfg.lr * (state.m.array() / mc) /
      ((state.v.array() / vc).sqrt() + cfg.eps);
}

}  // namespace cnode::diffcore
