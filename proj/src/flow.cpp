#include "cnode/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cnode/parallel.hpp"

namespace cnode::density {

using diffcore::ParamVector;
using diffcore::Rng;
using diffcore::Tape;
using diffcore::Tensor;

namespace {

constexpr double kLn2Pi = 1.8378770664093454836;

Vec x0_or_zeros(const Cnf& cnf) {
  return cnf.x0.size() > 0 ? cnf.x0 : Vec(Vec::Zero(cnf.field.k));
}

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t step) {
  return base ^ (0x9e3779b97f4a7c15ULL * (step + 1));
}

}  // namespace

double BaseDensity::log_prob(const Vec& u) const {
  if (u.size() != n) throw DimensionError("base log_prob", n, u.size());
  return -0.5 * (u.squaredNorm() + static_cast<double>(n) * kLn2Pi);
}

Vec BaseDensity::sample(Rng& rng) const { return rng.normal_vec(n); }

double BaseDensity::entropy() const {
  return 0.5 * static_cast<double>(n) * (1.0 + kLn2Pi);
}

TraceMode parse_trace_mode(const std::string& name) {
  if (name == "exact") return TraceMode::kExact;
  if (name == "hutchinson") return TraceMode::kHutchinson;
  throw ConfigError("unknown trace mode '" + name + "'");
}

ProbeDist parse_probe_dist(const std::string& name) {
  if (name == "rademacher") return ProbeDist::kRademacher;
  if (name == "gaussian") return ProbeDist::kGaussian;
  throw ConfigError("unknown probe distribution '" + name + "'");
}

void TraceEstimator::validate() const {
  if (probes < 1) throw ContractError("TraceEstimator: probes must be >= 1");
}

FlowDynamics::FlowDynamics(CharacteristicField field, Vec theta2,
                           TraceEstimator estimator)
    : field_(std::move(field)),
      theta2_(std::move(theta2)),
      estimator_(estimator) {
  field_.validate();
  estimator_.validate();
  if (field_.cond_dim != 0) {
    throw ContractError("FlowDynamics: flow fields are unconditioned");
  }
  if (theta2_.size() != field_.param_count()) {
    throw DimensionError("FlowDynamics theta2", field_.param_count(),
                         theta2_.size());
  }
  if (estimator_.mode == TraceMode::kHutchinson) {
    Rng rng(estimator_.seed);
    probes_.reserve(static_cast<std::size_t>(estimator_.probes));
    for (Index j = 0; j < estimator_.probes; ++j) {
      probes_.push_back(estimator_.dist == ProbeDist::kRademacher
                            ? rng.rademacher_vec(field_.n)
                            : rng.normal_vec(field_.n));
    }
  }
}

int FlowDynamics::record(Tape& tape, double /*s*/, int y, int theta) const {
  const Index n = field_.n;
  const Index k = field_.k;
  const int u = tape.slice(y, 0, n);
  const int x = tape.slice(y, n, k);
  const auto [dx, du] = model::record_field(tape, field_, theta, x, u, -1);

  int trace = -1;
  if (estimator_.mode == TraceMode::kExact) {
    for (Index i = 0; i < n; ++i) {
      const int seed = tape.constant(Tensor::vector(Vec::Unit(n, i)));
      const int row = tape.append_vjp(du, seed, u);
      const int diag = tape.pick(row, i);
      trace = trace < 0 ? diag : tape.add(trace, diag);
    }
  } else {
    int acc = -1;
    for (const Vec& probe : probes_) {
      const int pnode = tape.constant(Tensor::vector(probe));
      const int row = tape.append_vjp(du, pnode, u);
      const int quad = tape.dot(row, pnode);
      acc = acc < 0 ? quad : tape.add(acc, quad);
    }
    trace = tape.scale(acc, 1.0 / static_cast<double>(probes_.size()));
  }
  return tape.concat(tape.concat(du, dx), tape.neg(trace));
}

void Cnf::validate() const {
  field.validate();
  estimator.validate();
  if (field.cond_dim != 0) {
    throw ContractError("Cnf: flow fields are unconditioned");
  }
  if (field.balance != model::BalanceMode::kUOnly) {
    throw ContractError("Cnf: flow Jacobian net must read u only");
  }
  if (!field.unit_direction && field.direction_reads_x) {
    throw ContractError(
        "Cnf: flow direction net must not read x, otherwise the reverse "
        "solve from a data point is underdetermined");
  }
  if (x0.size() != 0 && x0.size() != field.k) {
    throw DimensionError("Cnf x0", field.k, x0.size());
  }
  if (!(std::isfinite(s0) && std::isfinite(s1)) || s1 <= s0) {
    throw ContractError("Cnf: need finite s1 > s0");
  }
}

Cnf make_cnf(Index n, Index k, const std::vector<Index>& direction_hidden,
             const std::vector<Index>& jac_hidden, diffcore::Activation act,
             bool unit_direction) {
  Cnf cnf;
  cnf.field.k = k;
  cnf.field.n = n;
  cnf.field.cond_dim = 0;
  cnf.field.balance = model::BalanceMode::kUOnly;
  cnf.field.unit_direction = unit_direction;
  cnf.field.direction_reads_x = false;
  if (!unit_direction) {
    cnf.field.direction_net.layer_widths.push_back(n);
    for (Index w : direction_hidden) {
      cnf.field.direction_net.layer_widths.push_back(w);
    }
    cnf.field.direction_net.layer_widths.push_back(k);
    cnf.field.direction_net.activation = act;
  }
  cnf.field.jac_net.layer_widths.push_back(n);
  for (Index w : jac_hidden) cnf.field.jac_net.layer_widths.push_back(w);
  cnf.field.jac_net.layer_widths.push_back(n * k);
  cnf.field.jac_net.activation = act;
  cnf.validate();
  return cnf;
}

Vec init_theta2(const Cnf& cnf, diffcore::Rng& rng) {
  Vec theta(cnf.field.param_count());
  if (!cnf.field.unit_direction) {
    theta.head(cnf.field.direction_param_count()) =
        diffcore::mlp_init(cnf.field.direction_net, rng);
  }
  theta.tail(cnf.field.jac_net.param_count()) =
      diffcore::mlp_init(cnf.field.jac_net, rng);
  return theta;
}

LogProbResult log_prob(const Cnf& cnf, const Vec& theta2, const Vec& v) {
  cnf.validate();
  const Index n = cnf.field.n;
  const Index k = cnf.field.k;
  if (v.size() != n) throw DimensionError("log_prob data point", n, v.size());

  FlowDynamics dyn(cnf.field, theta2, cnf.estimator);
  Vec y1(n + k + 1);
  y1 << v, x0_or_zeros(cnf), 0.0;
  const auto sol = solver::integrate({dyn.as_ode(), y1, cnf.s1, cnf.s0},
                                     cnf.solver);

  LogProbResult res;
  res.u0 = sol.y.head(n);
  res.delta0 = sol.y[n + k];
  res.log_prob = cnf.base().log_prob(res.u0) - res.delta0;
  res.stats = sol.stats;
  return res;
}

PushForwardResult push_forward(const Cnf& cnf, const Vec& theta2,
                               const Vec& u0) {
  cnf.validate();
  const Index n = cnf.field.n;
  const Index k = cnf.field.k;
  if (u0.size() != n) throw DimensionError("push_forward u0", n, u0.size());

  FlowDynamics dyn(cnf.field, theta2, cnf.estimator);
  Vec y0(n + k + 1);
  y0 << u0, x0_or_zeros(cnf), 0.0;
  const auto sol = solver::integrate({dyn.as_ode(), y0, cnf.s0, cnf.s1},
                                     cnf.solver);

  PushForwardResult res;
  res.v = sol.y.head(n);
  res.x_end = sol.y.segment(n, k);
  res.delta1 = sol.y[n + k];
  res.stats = sol.stats;
  return res;
}

namespace {

// Sampling integrates [u; x] only; the trace slot never feeds back into the
// trajectory, so dropping it halves the tape work per step.
class TraceFreeDynamics : public solver::TapedDynamics {
 public:
  TraceFreeDynamics(const CharacteristicField& field, const Vec& theta2)
      : field_(field), theta2_(theta2) {}

  Index state_dim() const override { return field_.n + field_.k; }
  const Vec& params() const override { return theta2_; }
  int record(Tape& tape, double /*s*/, int y, int theta) const override {
    const int u = tape.slice(y, 0, field_.n);
    const int x = tape.slice(y, field_.n, field_.k);
    const auto [dx, du] = model::record_field(tape, field_, theta, x, u, -1);
    return tape.concat(du, dx);
  }

 private:
  const CharacteristicField& field_;
  const Vec& theta2_;
};

}  // namespace

Mat sample(const Cnf& cnf, const Vec& theta2, Index count, std::uint64_t seed) {
  cnf.validate();
  if (count < 0) throw ContractError("sample: count must be nonnegative");
  const Index n = cnf.field.n;
  const BaseDensity base = cnf.base();
  TraceFreeDynamics dyn(cnf.field, theta2);
  if (theta2.size() != cnf.field.param_count()) {
    throw DimensionError("sample theta2", cnf.field.param_count(),
                         theta2.size());
  }

  Rng rng(seed);
  Mat out(count, n);
  const Vec x0 = x0_or_zeros(cnf);
  for (Index i = 0; i < count; ++i) {
    Vec y0(n + cnf.field.k);
    y0 << base.sample(rng), x0;
    const auto sol = solver::integrate({dyn.as_ode(), y0, cnf.s0, cnf.s1},
                                       cnf.solver);
    out.row(i) = sol.y.head(n).transpose();
  }
  return out;
}

NllGradient nll_gradient(const Cnf& cnf, const Vec& theta2, const Vec& v,
                         const TraceEstimator& estimator) {
  const Index n = cnf.field.n;
  const Index k = cnf.field.k;
  if (v.size() != n) throw DimensionError("nll data point", n, v.size());

  FlowDynamics dyn(cnf.field, theta2, estimator);
  Vec y1(n + k + 1);
  y1 << v, x0_or_zeros(cnf), 0.0;
  const auto fwd = solver::integrate({dyn.as_ode(), y1, cnf.s1, cnf.s0},
                                     cnf.solver);

  const Vec u0 = fwd.y.head(n);
  NllGradient res;
  res.nll = -(cnf.base().log_prob(u0) - fwd.y[n + k]);
  res.nfe_forward = fwd.stats.nfe;

  // d nll / d [u0; x; delta0] at the base end of the solve.
  Vec cot = Vec::Zero(n + k + 1);
  cot.head(n) = u0;
  cot[n + k] = 1.0;
  const auto gr =
      solver::integrate_adjoint(dyn, fwd.y, cnf.s1, cnf.s0, cnf.solver, cot);
  res.grad = gr.grad_params;
  res.nfe_adjoint = gr.stats.nfe;
  return res;
}

namespace {

struct NllTotals {
  Vec grad;
  double nll = 0.0;
  long nfe_forward = 0;
  long nfe_adjoint = 0;
  int count = 0;

  void add(const NllGradient& g) {
    if (grad.size() == 0) grad = Vec::Zero(g.grad.size());
    grad += g.grad;
    nll += g.nll;
    nfe_forward += g.nfe_forward;
    nfe_adjoint += g.nfe_adjoint;
    count += 1;
  }

  void merge(const NllTotals& o) {
    if (o.count == 0) return;
    if (grad.size() == 0) grad = Vec::Zero(o.grad.size());
    grad += o.grad;
    nll += o.nll;
    nfe_forward += o.nfe_forward;
    nfe_adjoint += o.nfe_adjoint;
    count += o.count;
  }
};

}  // namespace

CnfTrainResult train_cnf(const Cnf& cnf, Vec theta2,
                         const std::vector<Vec>& data,
                         const CnfTrainConfig& cfg) {
  cnf.validate();
  if (data.empty()) throw ContractError("train_cnf: empty dataset");
  if (theta2.size() != cnf.field.param_count()) {
    throw DimensionError("train_cnf theta2", cnf.field.param_count(),
                         theta2.size());
  }
  if (cfg.batch_size < 1) throw ContractError("train_cnf: batch_size >= 1");

  CnfTrainResult res;
  res.theta2 = std::move(theta2);
  Vec last_good = res.theta2;
  auto wrap = [](const Vec& v) {
    return ParamVector::from_segments({{"theta2", v}});
  };
  diffcore::AdamState adam = diffcore::AdamState::init(res.theta2.size());
  Rng shuffle_rng(cfg.seed);

  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    NllTotals epoch_totals;
    bool bad = false;
    for (std::size_t at = 0; at < order.size() && !bad;
         at += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t hi =
          std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
      NllTotals batch;
      try {
        batch = sharded_reduce<NllTotals>(
            at, hi, cfg.parallel, [&](std::size_t i, NllTotals& totals) {
              TraceEstimator est = cnf.estimator;
              if (est.mode == TraceMode::kHutchinson) {
                const std::uint64_t step =
                    static_cast<std::uint64_t>(epoch) * data.size() + i;
                est = est.with_seed(mix_seed(est.seed, step));
              }
              totals.add(
                  nll_gradient(cnf, res.theta2, data[order[i]], est));
            });
      } catch (const InstabilityError&) {
        bad = true;
        break;
      }
      if (!std::isfinite(batch.nll) ||
          (batch.grad.size() > 0 && !batch.grad.allFinite())) {
        bad = true;
        break;
      }
      ParamVector params = wrap(res.theta2);
      ParamVector grad = wrap(batch.grad / static_cast<double>(batch.count));
      try {
        adam_step(params, grad, adam, cfg.adam);
      } catch (const PoisonedGradientError&) {
        bad = true;
        break;
      }
      res.theta2 = params.values();
      epoch_totals.merge(batch);
    }
    if (bad) {
      res.diverged = true;
      res.theta2 = last_good;
      break;
    }
    CnfEpoch rec;
    rec.epoch = epoch;
    rec.nll = epoch_totals.nll / epoch_totals.count;
    rec.nfe_forward =
        static_cast<double>(epoch_totals.nfe_forward) / epoch_totals.count;
    rec.nfe_adjoint =
        static_cast<double>(epoch_totals.nfe_adjoint) / epoch_totals.count;
    res.history.push_back(rec);
    last_good = res.theta2;
  }
  return res;
}

double evaluate_nll(const Cnf& cnf, const Vec& theta2,
                    const std::vector<Vec>& data) {
  if (data.empty()) throw ContractError("evaluate_nll: empty dataset");
  double acc = 0.0;
  for (const Vec& v : data) acc -= log_prob(cnf, theta2, v).log_prob;
  return acc / static_cast<double>(data.size());
}

}  // namespace cnode::density
