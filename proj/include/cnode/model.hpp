#pragma once

#include <optional>
#include <string>

#include "cnode/field.hpp"
#include "cnode/param_vector.hpp"

namespace cnode::model {

using diffcore::ParamVector;
using diffcore::Rng;

// Full pipeline: feature net maps the observed input to u(s0); the field
// evolves [x; u] over [s0, s1]; the head maps u(s1) to the prediction.
// An absent feature net passes the input through as u(s0); an absent head
// reads the prediction off u(s1) directly. Either way the parameter vector
// keeps the theta1/theta2/theta3 segments (empty where absent).
//
// When the field is conditioned (cond_dim == n), u(s0) itself is fed to the
// direction net for the whole solve, so characteristics launched from
// different initial values may follow different spatial paths.
struct CnodeModel {
  std::optional<MlpSpec> feature_net;
  CharacteristicField field;
  std::optional<MlpSpec> head_net;
  double s0 = 0.0;
  double s1 = 1.0;
  Vec x0;  // start of the characteristic curve; zeros(k) if empty
  solver::SolverConfig solver;

  Index input_dim() const {
    return feature_net ? feature_net->in_dim() : field.n;
  }
  Index output_dim() const {
    return head_net ? head_net->out_dim() : field.n;
  }

  void validate() const;
  ParamVector init_params(Rng& rng) const;

  // Structured text description: architecture, spans, solver. Stable line
  // order, so its hash identifies the model for checkpoint compatibility.
  std::string describe() const;
  std::uint64_t hash() const;
};

struct EvolveResult {
  Vec u0;
  Vec u_end;
  Vec x_end;
  solver::SolveStats stats;
};

// Forward pass up to u(s1). A finite `horizon` overrides model.s1, which is
// how per-sample integration spans are expressed.
EvolveResult evolve(const CnodeModel& model, const ParamVector& params,
                    const Vec& z, double horizon = std::nan(""));

Vec predict(const CnodeModel& model, const ParamVector& params, const Vec& z,
            double horizon = std::nan(""));

// Dynamics for one forward solve of this model given packed parameters.
FieldDynamics make_dynamics(const CnodeModel& model, const ParamVector& params,
                            const Vec& u0);

}  // namespace cnode::model
