#include "cnode/model.hpp"

#include <cmath>
#include <sstream>

#include "cnode/checkpoint.hpp"

namespace cnode::model {

namespace {

std::string widths_str(const MlpSpec& spec) {
  std::ostringstream os;
  for (std::size_t i = 0; i < spec.layer_widths.size(); ++i) {
    if (i) os << ",";
    os << spec.layer_widths[i];
  }
  return os.str();
}

std::string activation_str(diffcore::Activation a) {
  switch (a) {
    case diffcore::Activation::kTanh:
      return "tanh";
    case diffcore::Activation::kRelu:
      return "relu";
    case diffcore::Activation::kIdentity:
      return "identity";
  }
  return "?";
}

}  // namespace

void CnodeModel::validate() const {
  field.validate();
  if (feature_net) {
    feature_net->validate();
    if (feature_net->out_dim() != field.n) {
      throw DimensionError("CnodeModel feature_net output", field.n,
                           feature_net->out_dim());
    }
  }
  if (head_net) {
    head_net->validate();
    if (head_net->in_dim() != field.n) {
      throw DimensionError("CnodeModel head_net input", field.n,
                           head_net->in_dim());
    }
  }
  if (field.cond_dim != 0 && field.cond_dim != field.n) {
    throw ContractError(
        "CnodeModel: conditioning width must be 0 or the width of u");
  }
  if (x0.size() != 0 && x0.size() != field.k) {
    throw DimensionError("CnodeModel x0", field.k, x0.size());
  }
  if (!std::isfinite(s0) || !std::isfinite(s1)) {
    throw ContractError("CnodeModel: span must be finite");
  }
}

ParamVector CnodeModel::init_params(Rng& rng) const {
  validate();
  Vec t1 = feature_net ? diffcore::mlp_init(*feature_net, rng) : Vec(0);
  Vec t2(field.param_count());
  if (!field.unit_direction) {
    t2.head(field.direction_param_count()) =
        diffcore::mlp_init(field.direction_net, rng);
  }
  t2.tail(field.jac_net.param_count()) = diffcore::mlp_init(field.jac_net, rng);
  Vec t3 = head_net ? diffcore::mlp_init(*head_net, rng) : Vec(0);
  return ParamVector::from_segments(
      {{"theta1", t1}, {"theta2", t2}, {"theta3", t3}});
}

std::string CnodeModel::describe() const {
  std::ostringstream os;
  os << "[model]\n";
  os << "feature = " << (feature_net ? widths_str(*feature_net) : "none") << "\n";
  if (feature_net) os << "feature_activation = " << activation_str(feature_net->activation) << "\n";
  os << "k = " << field.k << "\n";
  os << "n = " << field.n << "\n";
  os << "cond = " << field.cond_dim << "\n";
  os << "balance = " << balance_name(field.balance) << "\n";
  os << "direction = "
     << (field.unit_direction ? std::string("unit") : widths_str(field.direction_net))
     << "\n";
  os << "direction_input = "
     << (field.unit_direction ? "none" : field.direction_reads_x ? "x,u" : "u")
     << "\n";
  os << "jac = " << widths_str(field.jac_net) << "\n";
  os << "activation = " << activation_str(field.jac_net.activation) << "\n";
  os << "head = " << (head_net ? widths_str(*head_net) : "none") << "\n";
  if (head_net) {
    os << "head_output = "
       << (head_net->output == diffcore::OutputActivation::kSoftmax ? "softmax" : "identity")
       << "\n";
  }
  os << "span = " << s0 << "," << s1 << "\n";
  os << "[solver]\n";
  os << "method = " << solver::method_name(solver.method) << "\n";
  os << "h = " << solver.h << "\n";
  os << "rtol = " << solver.rtol << "\n";
  os << "atol = " << solver.atol << "\n";
  return os.str();
}

std::uint64_t CnodeModel::hash() const { return diffcore::fnv1a(describe()); }

FieldDynamics make_dynamics(const CnodeModel& model, const ParamVector& params,
                            const Vec& u0) {
  const Vec cond = model.field.cond_dim > 0 ? u0 : Vec(0);
  return FieldDynamics(model.field, params.segment("theta2"), cond);
}

EvolveResult evolve(const CnodeModel& model, const ParamVector& params,
                    const Vec& z, double horizon) {
  model.validate();
  if (z.size() != model.input_dim()) {
    throw DimensionError("evolve input", model.input_dim(), z.size());
  }
  EvolveResult res;
  res.u0 = model.feature_net
               ? diffcore::mlp_forward(*model.feature_net,
                                       params.segment("theta1"), z)
               : z;
  FieldDynamics dyn = make_dynamics(model, params, res.u0);

  Vec y0(model.field.k + model.field.n);
  y0.head(model.field.k) =
      model.x0.size() > 0 ? model.x0 : Vec(Vec::Zero(model.field.k));
  y0.tail(model.field.n) = res.u0;

  const double s_end = std::isnan(horizon) ? model.s1 : horizon;
  auto sol = solver::integrate({dyn.as_ode(), y0, model.s0, s_end}, model.solver);
  res.x_end = sol.y.head(model.field.k);
  res.u_end = sol.y.tail(model.field.n);
  res.stats = sol.stats;
  return res;
}

Vec predict(const CnodeModel& model, const ParamVector& params, const Vec& z,
            double horizon) {
  const EvolveResult ev = evolve(model, params, z, horizon);
  if (!model.head_net) return ev.u_end;
  return diffcore::mlp_forward(*model.head_net, params.segment("theta3"),
                               ev.u_end);
}

}  // namespace cnode::model
