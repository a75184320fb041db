#include "cnode/tasks/pde.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>

#include "cnode/parallel.hpp"
#include "cnode/rng.hpp"
#include "cnode/tape.hpp"

namespace cnode::tasks {

using diffcore::Rng;
using diffcore::Tape;
using diffcore::Tensor;

double analytic_u(double x, double t) {
  const double e = std::exp(t);
  return 2.0 * x * e / (2.0 * e + 1.0);
}

PdeDataset gen_pde_dataset(Index n_train, Index n_test, std::uint64_t seed) {
  if (n_train <= 0 || n_test <= 0) {
    throw ContractError("gen_pde_dataset: sizes must be positive");
  }
  Rng rng(seed);
  PdeDataset data;
  data.seed = seed;
  auto draw = [&]() {
    PdePoint p;
    p.x = rng.uniform(1.0, 2.0);
    p.t = rng.uniform(0.0, 1.0);
    p.u = analytic_u(p.x, p.t);
    return p;
  };
  data.train.reserve(static_cast<std::size_t>(n_train));
  data.test.reserve(static_cast<std::size_t>(n_test));
  for (Index i = 0; i < n_train; ++i) data.train.push_back(draw());
  for (Index i = 0; i < n_test; ++i) data.test.push_back(draw());
  return data;
}

std::string pde_csv(const std::vector<PdePoint>& points) {
  std::string out = "x,t,u\n";
  char buf[96];
  for (const PdePoint& p : points) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", p.x, p.t, p.u);
    out += buf;
  }
  return out;
}

Index PdeNets::param_count() const {
  return nn1.param_count() + nn2.param_count() + nn3.param_count() +
         nn4.param_count();
}

void PdeNets::validate() const {
  nn1.validate();
  nn2.validate();
  nn3.validate();
  nn4.validate();
  if (nn1.in_dim() != 2 || nn1.out_dim() != 1) {
    throw DimensionError("pde nn1 shape", 2, nn1.in_dim());
  }
  if (nn2.in_dim() != 2 || nn2.out_dim() != 1) {
    throw DimensionError("pde nn2 shape", 2, nn2.in_dim());
  }
  if (nn3.in_dim() != 1 || nn3.out_dim() != 2) {
    throw DimensionError("pde nn3 shape", 1, nn3.in_dim());
  }
  if (nn4.in_dim() != 1 || nn4.out_dim() != 1) {
    throw DimensionError("pde nn4 shape", 1, nn4.in_dim());
  }
}

PdeNets default_pde_nets() {
  PdeNets nets;
  nets.nn1.layer_widths = {2, 12, 12, 1};
  nets.nn2.layer_widths = {2, 12, 12, 1};
  nets.nn3.layer_widths = {1, 12, 12, 2};
  nets.nn4.layer_widths = {1, 12, 12, 1};
  nets.validate();
  return nets;
}

MlpSpec default_node_pde_net() {
  MlpSpec net;
  net.layer_widths = {2, 32, 32, 1};
  return net;
}

ParamVector init_pde_params(const PdeNets& nets, Rng& rng) {
  nets.validate();
  return ParamVector::from_segments({{"nn1", diffcore::mlp_init(nets.nn1, rng)},
                                     {"nn2", diffcore::mlp_init(nets.nn2, rng)},
                                     {"nn3", diffcore::mlp_init(nets.nn3, rng)},
                                     {"nn4", diffcore::mlp_init(nets.nn4, rng)}});
}

ParamVector init_node_pde_params(const MlpSpec& net, Rng& rng) {
  return ParamVector::from_segments({{"nn1", diffcore::mlp_init(net, rng)}});
}

namespace {

struct TapedForward {
  int pred = -1;
  int iota = -1;
  int fp_iters = 0;
  bool converged = true;
};

// Builds one prediction on the tape given the flat parameter node.
using ForwardBuilder =
    std::function<TapedForward(Tape&, int, double, double)>;

int scalar_net(Tape& tape, const MlpSpec& spec, int theta, int in) {
  return diffcore::mlp_forward(tape, spec, theta, in);
}

// Four-step prediction: solve for the characteristic foot iota, read the
// boundary value and the two rates there, then integrate the composed rate
// along x(s) = iota + rate_x * s by the trapezoid rule.
TapedForward record_cnode_pde(Tape& tape, const PdeNets& nets,
                              const ParamVector& layout, int th, double x,
                              double t, const PdeFitConfig& cfg) {
  const int th1 = tape.slice(th, layout.segment_offset("nn1"),
                             layout.segment_size("nn1"));
  const int th2 = tape.slice(th, layout.segment_offset("nn2"),
                             layout.segment_size("nn2"));
  const int th3 = tape.slice(th, layout.segment_offset("nn3"),
                             layout.segment_size("nn3"));
  const int th4 = tape.slice(th, layout.segment_offset("nn4"),
                             layout.segment_size("nn4"));

  TapedForward res;
  const int cx = tape.constant_scalar(x);
  int iota = cx;
  double prev = x;
  int boundary = -1;
  int rates = -1;
  res.converged = false;
  for (int m = 0; m < cfg.fp_max_iters; ++m) {
    boundary = scalar_net(tape, nets.nn4, th4, iota);
    rates = scalar_net(tape, nets.nn3, th3, boundary);
    iota = tape.sub(cx, tape.scale(tape.pick(rates, 0), t));
    res.fp_iters = m + 1;
    const double cur = tape.value(iota).value();
    if (std::abs(cur - prev) <= cfg.fp_tol) {
      res.converged = true;
      break;
    }
    prev = cur;
  }
  boundary = scalar_net(tape, nets.nn4, th4, iota);
  rates = scalar_net(tape, nets.nn3, th3, boundary);
  res.iota = iota;
  const int rate_x = tape.pick(rates, 0);
  const int rate_t = tape.pick(rates, 1);

  if (t == 0.0) {
    res.pred = boundary;
    return res;
  }
  const double h = t / cfg.quad_steps;
  int acc = -1;
  for (int j = 0; j <= cfg.quad_steps; ++j) {
    const double s = h * j;
    const int xs = tape.add(iota, tape.scale(rate_x, s));
    const int in = tape.concat(xs, tape.constant_scalar(s));
    const int g = tape.add(tape.mul(scalar_net(tape, nets.nn2, th2, in), rate_x),
                           tape.mul(scalar_net(tape, nets.nn1, th1, in), rate_t));
    const int term =
        (j == 0 || j == cfg.quad_steps) ? tape.scale(g, 0.5) : g;
    acc = acc < 0 ? term : tape.add(acc, term);
  }
  res.pred = tape.add(tape.scale(acc, h), boundary);
  return res;
}

// Baseline prediction: integrate the learned time rate from zero at fixed x.
TapedForward record_node_pde(Tape& tape, const MlpSpec& net, int th, double x,
                             double t, const PdeFitConfig& cfg) {
  TapedForward res;
  if (t == 0.0) {
    res.pred = tape.constant_scalar(0.0);
    return res;
  }
  const double h = t / cfg.quad_steps;
  const int cx = tape.constant_scalar(x);
  int acc = -1;
  for (int j = 0; j <= cfg.quad_steps; ++j) {
    const double s = h * j;
    const int in = tape.concat(cx, tape.constant_scalar(s));
    const int g = scalar_net(tape, net, th, in);
    const int term =
        (j == 0 || j == cfg.quad_steps) ? tape.scale(g, 0.5) : g;
    acc = acc < 0 ? term : tape.add(acc, term);
  }
  res.pred = tape.scale(acc, h);
  return res;
}

struct FitTotals {
  Vec grad;
  double loss = 0.0;
  long flagged = 0;
  int max_fp_iters = 0;
  int count = 0;

  void merge(const FitTotals& o) {
    if (grad.size() == 0) {
      grad = o.grad;
    } else if (o.grad.size() > 0) {
      grad += o.grad;
    }
    loss += o.loss;
    flagged += o.flagged;
    max_fp_iters = std::max(max_fp_iters, o.max_fp_iters);
    count += o.count;
  }
};

struct EvalTotals {
  std::vector<double> pred;
  std::vector<double> truth;
  long flagged = 0;
  int max_fp_iters = 0;

  void merge(const EvalTotals& o) {
    pred.insert(pred.end(), o.pred.begin(), o.pred.end());
    truth.insert(truth.end(), o.truth.begin(), o.truth.end());
    flagged += o.flagged;
    max_fp_iters = std::max(max_fp_iters, o.max_fp_iters);
  }
};

void check_flag_budget(long flagged, std::size_t total, double budget,
                       const char* where) {
  if (total == 0) return;
  if (static_cast<double>(flagged) >
      budget * static_cast<double>(total)) {
    throw TaskError(std::string(where) +
                    ": fixed-point solve failed on too many samples (" +
                    std::to_string(flagged) + " of " + std::to_string(total) +
                    ")");
  }
}

double eval_deviation(const std::vector<PdePoint>& points,
                      const ParamVector& params, const ForwardBuilder& build,
                      const PdeFitConfig& cfg, int* max_iters) {
  EvalTotals totals = sharded_reduce<EvalTotals>(
      0, points.size(), cfg.parallel, [&](std::size_t i, EvalTotals& out) {
        Tape tape;
        const int th = tape.leaf(Tensor::vector(params.values()));
        const auto fw = build(tape, th, points[i].x, points[i].t);
        out.max_fp_iters = std::max(out.max_fp_iters, fw.fp_iters);
        if (!fw.converged) {
          out.flagged += 1;
          return;
        }
        out.pred.push_back(tape.value(fw.pred).value());
        out.truth.push_back(points[i].u);
      });
  check_flag_budget(totals.flagged, points.size(), cfg.flag_budget,
                    "pde evaluation");
  if (max_iters) *max_iters = std::max(*max_iters, totals.max_fp_iters);
  return percent_deviation(totals.pred, totals.truth);
}

PdeFitResult fit_generic(const PdeDataset& data, ParamVector init,
                         const ForwardBuilder& build, const PdeFitConfig& cfg) {
  if (data.train.empty() || data.test.empty()) {
    throw ContractError("pde fit: empty dataset");
  }
  if (cfg.batch_size < 1 || cfg.quad_steps < 1) {
    throw ContractError("pde fit: bad config");
  }

  PdeFitResult res;
  res.params = std::move(init);
  ParamVector last_good = res.params;
  diffcore::AdamState adam = diffcore::AdamState::init(res.params.size());
  Rng shuffle_rng(cfg.shuffle_seed);

  std::vector<int> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    long epoch_flagged = 0;
    long epoch_used = 0;
    int epoch_max_iters = 0;
    bool bad = false;

    for (std::size_t at = 0; at < order.size() && !bad;
         at += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t hi =
          std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
      FitTotals batch = sharded_reduce<FitTotals>(
          at, hi, cfg.parallel, [&](std::size_t i, FitTotals& out) {
            const PdePoint& p = data.train[static_cast<std::size_t>(order[i])];
            Tape tape;
            const int th = tape.leaf(Tensor::vector(res.params.values()));
            const auto fw = build(tape, th, p.x, p.t);
            out.max_fp_iters = std::max(out.max_fp_iters, fw.fp_iters);
            if (!fw.converged) {
              out.flagged += 1;
              return;
            }
            const int loss =
                diffcore::mse_loss(tape, fw.pred, Vec::Constant(1, p.u));
            const auto adj = tape.backward(loss);
            if (out.grad.size() == 0) out.grad = Vec::Zero(res.params.size());
            if (adj[static_cast<std::size_t>(th)].size() > 0) {
              out.grad += adj[static_cast<std::size_t>(th)];
            }
            out.loss += tape.value(loss).value();
            out.count += 1;
          });
      epoch_flagged += batch.flagged;
      epoch_max_iters = std::max(epoch_max_iters, batch.max_fp_iters);
      if (batch.count == 0) continue;
      if (!std::isfinite(batch.loss) ||
          (batch.grad.size() > 0 && !batch.grad.allFinite())) {
        bad = true;
        break;
      }
      auto grad = res.params.zeros_like();
      grad.values() = batch.grad / static_cast<double>(batch.count);
      try {
        adam_step(res.params, grad, adam, cfg.adam);
      } catch (const PoisonedGradientError&) {
        bad = true;
        break;
      }
      epoch_loss += batch.loss;
      epoch_used += batch.count;
    }

    if (bad) {
      res.diverged = true;
      res.params = last_good;
      break;
    }
    check_flag_budget(epoch_flagged, data.train.size(), cfg.flag_budget,
                      "pde training epoch");
    PdeEpoch rec;
    rec.epoch = epoch;
    rec.loss = epoch_used > 0 ? epoch_loss / static_cast<double>(epoch_used)
                              : std::numeric_limits<double>::quiet_NaN();
    rec.flagged = epoch_flagged;
    rec.max_fp_iters = epoch_max_iters;
    res.history.push_back(rec);
    res.max_fp_iters = std::max(res.max_fp_iters, epoch_max_iters);
    last_good = res.params;
  }

  if (!res.diverged) {
    res.train_deviation_pct = eval_deviation(data.train, res.params, build,
                                             cfg, &res.max_fp_iters);
    res.test_deviation_pct = eval_deviation(data.test, res.params, build, cfg,
                                            &res.max_fp_iters);
  }
  return res;
}

}  // namespace

PdeForward pde_forward(const PdeNets& nets, const ParamVector& params,
                       double x, double t, const PdeFitConfig& cfg) {
  nets.validate();
  if (params.size() != nets.param_count()) {
    throw DimensionError("pde_forward params", nets.param_count(),
                         params.size());
  }
  Tape tape;
  const int th = tape.constant(Tensor::vector(params.values()));
  const auto fw = record_cnode_pde(tape, nets, params, th, x, t, cfg);
  PdeForward res;
  res.pred = tape.value(fw.pred).value();
  res.iota = tape.value(fw.iota).value();
  res.fp_iters = fw.fp_iters;
  res.converged = fw.converged;
  return res;
}

double node_pde_forward(const MlpSpec& net, const ParamVector& params,
                        double x, double t, const PdeFitConfig& cfg) {
  Tape tape;
  const int th = tape.constant(Tensor::vector(params.values()));
  const auto fw = record_node_pde(tape, net, th, x, t, cfg);
  return tape.value(fw.pred).value();
}

PdeFitResult pde_fit(const PdeDataset& data, const PdeNets& nets,
                     const PdeFitConfig& cfg) {
  nets.validate();
  Rng rng(cfg.init_seed);
  ParamVector init = init_pde_params(nets, rng);
  const ParamVector layout = init;
  ForwardBuilder build = [&nets, layout, &cfg](Tape& tape, int th, double x,
                                               double t) {
    return record_cnode_pde(tape, nets, layout, th, x, t, cfg);
  };
  return fit_generic(data, std::move(init), build, cfg);
}

PdeFitResult node_pde_baseline(const PdeDataset& data, const MlpSpec& net,
                               const PdeFitConfig& cfg) {
  net.validate();
  if (net.in_dim() != 2 || net.out_dim() != 1) {
    throw DimensionError("node pde net shape", 2, net.in_dim());
  }
  Rng rng(cfg.init_seed);
  ParamVector init = init_node_pde_params(net, rng);
  ForwardBuilder build = [&net, &cfg](Tape& tape, int th, double x, double t) {
    return record_node_pde(tape, net, th, x, t, cfg);
  };
  return fit_generic(data, std::move(init), build, cfg);
}

double percent_deviation(const std::vector<double>& pred,
                         const std::vector<double>& truth) {
  if (pred.size() != truth.size()) {
    throw DimensionError("percent_deviation", static_cast<Index>(truth.size()),
                         static_cast<Index>(pred.size()));
  }
  if (pred.empty()) throw ContractError("percent_deviation: empty inputs");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (truth[i] == 0.0) {
      throw ContractError("percent_deviation: zero reference value");
    }
    acc += std::abs(pred[i] - truth[i]) / std::abs(truth[i]);
  }
  return 100.0 * acc / static_cast<double>(pred.size());
}

}  // namespace cnode::tasks
