#include "cnode/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cnode/parallel.hpp"

namespace cnode::model {

using diffcore::Tape;
using diffcore::Tensor;

Loss parse_loss(const std::string& name) {
  if (name == "mse") return Loss::kMse;
  if (name == "cross_entropy") return Loss::kCrossEntropy;
  throw ConfigError("unknown loss '" + name + "'");
}

GradMode parse_grad_mode(const std::string& name) {
  if (name == "adjoint") return GradMode::kAdjoint;
  if (name == "discrete") return GradMode::kDiscrete;
  throw ConfigError("unknown grad mode '" + name + "'");
}

std::string grad_mode_name(GradMode m) {
  return m == GradMode::kAdjoint ? "adjoint" : "discrete";
}

namespace {

Index argmax(const Vec& v) {
  Index best = 0;
  v.maxCoeff(&best);
  return best;
}

}  // namespace

ExampleGrad example_gradient(const CnodeModel& model, const ParamVector& params,
                             const Example& ex, Loss loss, GradMode mode) {
  const Index k = model.field.k;
  const Index n = model.field.n;
  const EvolveResult ev = evolve(model, params, ex.z, ex.horizon);

  // Head and loss on one tape: yields the loss value, d loss / d theta3, and
  // the cotangent at u(s1) in a single sweep.
  Tape tape;
  const int un = tape.leaf(Tensor::vector(ev.u_end));
  int th3 = -1;
  int out = un;
  if (model.head_net) {
    th3 = tape.leaf(Tensor::vector(params.segment("theta3")));
    MlpSpec head = *model.head_net;
    if (loss == Loss::kCrossEntropy) {
      // Cross-entropy consumes logits; the softmax lives inside the loss.
      head.output = diffcore::OutputActivation::kIdentity;
    }
    out = mlp_forward(tape, head, th3, un);
  }
  int loss_node;
  if (loss == Loss::kMse) {
    if (ex.target.size() != tape.value(out).size()) {
      throw DimensionError("example target", tape.value(out).size(),
                           ex.target.size());
    }
    loss_node = mse_loss(tape, out, ex.target);
  } else {
    if (ex.label < 0 || ex.label >= tape.value(out).size()) {
      throw ContractError("example label out of range");
    }
    loss_node = diffcore::cross_entropy_loss(tape, out, ex.label);
  }
  const auto adj = tape.backward(loss_node);

  ExampleGrad res;
  res.loss = tape.value(loss_node).value();
  res.metric = loss == Loss::kMse
                   ? res.loss
                   : (argmax(tape.value(out).data()) == ex.label ? 1.0 : 0.0);
  res.nfe_forward = ev.stats.nfe;

  const Vec gu_end = adj[un].size() > 0 ? adj[un] : Vec::Zero(n);

  // Gradient through the solve.
  FieldDynamics dyn = make_dynamics(model, params, ev.u0);
  Vec state_cot = Vec::Zero(k + n);
  state_cot.tail(n) = gu_end;
  const double s_end = std::isnan(ex.horizon) ? model.s1 : ex.horizon;

  solver::GradientResult gr;
  if (mode == GradMode::kAdjoint) {
    Vec y_end(k + n);
    y_end.head(k) = ev.x_end;
    y_end.tail(n) = ev.u_end;
    gr = solver::integrate_adjoint(dyn, y_end, model.s0, s_end, model.solver,
                                   state_cot);
  } else {
    Vec y0(k + n);
    y0.head(k) = model.x0.size() > 0 ? model.x0 : Vec(Vec::Zero(k));
    y0.tail(n) = ev.u0;
    gr = solver::backprop_through_solver(dyn, y0, model.s0, s_end, model.solver,
                                         state_cot);
  }
  res.nfe_gradient = gr.stats.nfe;

  const Index p2 = dyn.theta2_size();
  Vec gu0 = gr.grad_y0.tail(n);
  if (model.field.cond_dim > 0) gu0 += gr.grad_params.tail(model.field.cond_dim);

  Vec g1(params.segment_size("theta1"));
  if (model.feature_net) {
    Tape ft;
    const int th1 = ft.leaf(Tensor::vector(params.segment("theta1")));
    const int zn = ft.constant(Tensor::vector(ex.z));
    const int u0n = mlp_forward(ft, *model.feature_net, th1, zn);
    const auto fadj = ft.backward_seeded(u0n, gu0);
    g1 = fadj[th1].size() > 0 ? fadj[th1] : Vec::Zero(g1.size());
  }

  res.grad = Vec::Zero(params.size());
  res.grad.segment(params.segment_offset("theta1"), g1.size()) = g1;
  res.grad.segment(params.segment_offset("theta2"), p2) = gr.grad_params.head(p2);
  if (th3 >= 0 && adj[th3].size() > 0) {
    res.grad.segment(params.segment_offset("theta3"), adj[th3].size()) = adj[th3];
  }
  return res;
}

namespace {

struct BatchTotals {
  Vec grad;
  double loss = 0.0;
  double metric = 0.0;
  long nfe_forward = 0;
  long nfe_gradient = 0;
  int count = 0;

  void add(const ExampleGrad& eg) {
    if (grad.size() == 0) grad = Vec::Zero(eg.grad.size());
    grad += eg.grad;
    loss += eg.loss;
    metric += eg.metric;
    nfe_forward += eg.nfe_forward;
    nfe_gradient += eg.nfe_gradient;
    count += 1;
  }

  void merge(const BatchTotals& o) {
    if (o.count == 0) return;
    if (grad.size() == 0) grad = Vec::Zero(o.grad.size());
    grad += o.grad;
    loss += o.loss;
    metric += o.metric;
    nfe_forward += o.nfe_forward;
    nfe_gradient += o.nfe_gradient;
    count += o.count;
  }
};

BatchTotals batch_gradients(const CnodeModel& model, const ParamVector& params,
                            const Dataset& data, const std::vector<int>& order,
                            std::size_t begin, std::size_t end,
                            const TrainConfig& cfg) {
  return sharded_reduce<BatchTotals>(
      begin, end, cfg.parallel, [&](std::size_t i, BatchTotals& totals) {
        totals.add(example_gradient(model, params, data[order[i]], cfg.loss,
                                    cfg.grad_mode));
      });
}

}  // namespace

TrainResult train(const CnodeModel& model, ParamVector init,
                  const Dataset& data, const TrainConfig& cfg) {
  model.validate();
  if (data.empty()) throw ContractError("train: empty dataset");
  if (init.size() == 0) throw ContractError("train: empty parameter vector");

  TrainResult res;
  res.params = std::move(init);
  ParamVector last_good = res.params;
  diffcore::AdamState adam = diffcore::AdamState::init(res.params.size());
  diffcore::Rng shuffle_rng(cfg.seed);

  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    BatchTotals epoch_totals;
    bool bad = false;
    for (std::size_t at = 0; at < order.size() && !bad;
         at += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t hi =
          std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
      BatchTotals batch;
      try {
        batch = batch_gradients(model, res.params, data, order, at, hi, cfg);
      } catch (const InstabilityError&) {
        bad = true;
        break;
      }
      if (!std::isfinite(batch.loss) ||
          (batch.grad.size() > 0 && !batch.grad.allFinite())) {
        bad = true;
        break;
      }
      auto gpv = res.params.zeros_like();
      gpv.values() = batch.grad / static_cast<double>(batch.count);
      try {
        adam_step(res.params, gpv, adam, cfg.adam);
      } catch (const PoisonedGradientError&) {
        bad = true;
        break;
      }
      epoch_totals.merge(batch);
    }
    if (bad) {
      res.diverged = true;
      res.params = last_good;
      break;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = epoch_totals.loss / epoch_totals.count;
    rec.metric = epoch_totals.metric / epoch_totals.count;
    rec.nfe_forward =
        static_cast<double>(epoch_totals.nfe_forward) / epoch_totals.count;
    rec.nfe_gradient =
        static_cast<double>(epoch_totals.nfe_gradient) / epoch_totals.count;
    res.history.push_back(rec);
    last_good = res.params;
  }
  return res;
}

double evaluate_mse(const CnodeModel& model, const ParamVector& params,
                    const Dataset& data) {
  if (data.empty()) throw ContractError("evaluate_mse: empty dataset");
  double acc = 0.0;
  for (const auto& ex : data) {
    const Vec pred = predict(model, params, ex.z, ex.horizon);
    if (pred.size() != ex.target.size()) {
      throw DimensionError("evaluate_mse target", pred.size(), ex.target.size());
    }
    acc += (pred - ex.target).squaredNorm() / static_cast<double>(pred.size());
  }
  return acc / static_cast<double>(data.size());
}

double evaluate_accuracy(const CnodeModel& model, const ParamVector& params,
                         const Dataset& data) {
  if (data.empty()) throw ContractError("evaluate_accuracy: empty dataset");
  long hits = 0;
  for (const auto& ex : data) {
    const Vec pred = predict(model, params, ex.z, ex.horizon);
    if (argmax(pred) == ex.label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

}  // namespace cnode::model
