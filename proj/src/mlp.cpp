#include "cnode/mlp.hpp"

#include <cmath>

namespace cnode::diffcore {

namespace {

Vec stable_log_softmax(const Vec& x) {
  const double m = x.maxCoeff();
  const double lse = std::log((x.array() - m).exp().sum()) + m;
  return x.array() - lse;
}

Vec apply_activation(Activation act, const Vec& pre) {
  switch (act) {
    case Activation::kTanh:
      return pre.array().tanh();
    case Activation::kRelu:
      return pre.array().max(0.0);
    case Activation::kIdentity:
      return pre;
  }
  throw ContractError("unknown activation");
}

Vec activation_grad(Activation act, const Vec& pre, const Vec& post) {
  switch (act) {
    case Activation::kTanh:
      return 1.0 - post.array().square();
    case Activation::kRelu:
      return (pre.array() > 0.0).cast<double>();
    case Activation::kIdentity:
      return Vec::Ones(pre.size());
  }
  throw ContractError("unknown activation");
}

}  // namespace

Vec mlp_init(const MlpSpec& spec, Rng& rng) {
  spec.validate();
  Vec params(spec.param_count());
  Index off = 0;
  for (Index l = 0; l < spec.n_layers(); ++l) {
    const Index fan_in = spec.layer_widths[l];
    const Index fan_out = spec.layer_widths[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (Index i = 0; i < fan_in * fan_out; ++i) {
      params[off++] = rng.uniform(-limit, limit);
    }
    params.segment(off, fan_out).setZero();
    off += fan_out;
  }
  return params;
}

Vec mlp_forward(const MlpSpec& spec, const Vec& params, const Vec& input) {
  spec.validate();
  if (input.size() != spec.in_dim()) {
    throw DimensionError("mlp_forward input", spec.in_dim(), input.size());
  }
  if (params.size() != spec.param_count()) {
    throw DimensionError("mlp_forward params", spec.param_count(), params.size());
  }
  Vec x = input;
  Index off = 0;
  for (Index l = 0; l < spec.n_layers(); ++l) {
    const Index n_in = spec.layer_widths[l];
    const Index n_out = spec.layer_widths[l + 1];
    // Materialized copy, not a map: keeps the product kernel and its
    // accumulation order identical to the taped overload, which multiplies
    // from an owned buffer. Needed for bitwise agreement between the two.
    RowMat w = Eigen::Map<const RowMat>(params.data() + off, n_out, n_in);
    off += n_in * n_out;
    Vec pre = w * x;
    pre += params.segment(off, n_out);
    off += n_out;
    x = (l + 1 < spec.n_layers()) ? apply_activation(spec.activation, pre) : pre;
  }
  if (spec.output == OutputActivation::kSoftmax) {
    x = stable_log_softmax(x).array().exp();
  }
  return x;
}

int mlp_forward(Tape& tape, const MlpSpec& spec, int params, int input) {
  spec.validate();
  if (tape.value(input).size() != spec.in_dim()) {
    throw DimensionError("mlp_forward input", spec.in_dim(), tape.value(input).size());
  }
  if (tape.value(params).size() != spec.param_count()) {
    throw DimensionError("mlp_forward params", spec.param_count(),
                         tape.value(params).size());
  }
  int x = input;
  Index off = 0;
  for (Index l = 0; l < spec.n_layers(); ++l) {
    const Index n_in = spec.layer_widths[l];
    const Index n_out = spec.layer_widths[l + 1];
    const int w = tape.reshape(tape.slice(params, off, n_in * n_out), {n_out, n_in});
    off += n_in * n_out;
    const int b = tape.slice(params, off, n_out);
    off += n_out;
    const int pre = tape.add(tape.matvec(w, x), b);
    if (l + 1 < spec.n_layers()) {
      switch (spec.activation) {
        case Activation::kTanh:
          x = tape.tanh(pre);
          break;
        case Activation::kRelu:
          x = tape.relu(pre);
          break;
        case Activation::kIdentity:
          x = pre;
          break;
      }
    } else {
      x = pre;
    }
  }
  if (spec.output == OutputActivation::kSoftmax) {
    x = tape.softmax(x);
  }
  return x;
}

Mat mlp_jacobian(const MlpSpec& spec, const Vec& params, const Vec& input) {
  spec.validate();
  if (input.size() != spec.in_dim()) {
    throw DimensionError("mlp_jacobian input", spec.in_dim(), input.size());
  }
  Vec x = input;
  Mat jac = Mat::Identity(spec.in_dim(), spec.in_dim());
  Index off = 0;
  for (Index l = 0; l < spec.n_layers(); ++l) {
    const Index n_in = spec.layer_widths[l];
    const Index n_out = spec.layer_widths[l + 1];
    Eigen::Map<const RowMat> w(params.data() + off, n_out, n_in);
    off += n_in * n_out;
    Vec pre = w * x;
    pre += params.segment(off, n_out);
    off += n_out;
    jac = (w * jac).eval();
    if (l + 1 < spec.n_layers()) {
      Vec post = apply_activation(spec.activation, pre);
      jac = activation_grad(spec.activation, pre, post).asDiagonal() * jac;
      x = post;
    } else {
      x = pre;
    }
  }
  if (spec.output == OutputActivation::kSoftmax) {
    Vec y = stable_log_softmax(x).array().exp();
    jac = (Mat(y.asDiagonal()) - y * y.transpose()) * jac;
  }
  return jac;
}

int mse_loss(Tape& tape, int pred, const Vec& target) {
  if (tape.value(pred).size() != target.size()) {
    throw DimensionError("mse_loss", target.size(), tape.value(pred).size());
  }
  const int t = tape.constant(Tensor::vector(target));
  const int d = tape.sub(pred, t);
  return tape.scale(tape.dot(d, d), 1.0 / static_cast<double>(target.size()));
}

int cross_entropy_loss(Tape& tape, int logits, Index label) {
  return tape.neg(tape.pick(tape.log_softmax(logits), label));
}

}  // namespace cnode::diffcore
