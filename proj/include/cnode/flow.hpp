#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cnode/adam.hpp"
#include "cnode/field.hpp"
#include "cnode/rng.hpp"

namespace cnode::density {

using model::CharacteristicField;

// Standard normal on R^n.
struct BaseDensity {
  Index n = 1;

  double log_prob(const Vec& u) const;
  Vec sample(diffcore::Rng& rng) const;
  double entropy() const;
};

enum class TraceMode { kExact, kHutchinson };
enum class ProbeDist { kRademacher, kGaussian };

TraceMode parse_trace_mode(const std::string& name);
ProbeDist parse_probe_dist(const std::string& name);

struct TraceEstimator {
  TraceMode mode = TraceMode::kExact;
  Index probes = 1;
  ProbeDist dist = ProbeDist::kRademacher;
  std::uint64_t seed = 0;

  void validate() const;
  TraceEstimator with_seed(std::uint64_t s) const {
    TraceEstimator e = *this;
    e.seed = s;
    return e;
  }
};

// Dynamics over the stacked flow state [u; x; delta_logp], where
// d(delta_logp)/ds = -tr(d(du/ds)/du) at the current (x, u). The trace is
// taken with respect to the instantaneous u only. Hutchinson probes are
// drawn once per instance, so they stay fixed across the steps of a solve.
class FlowDynamics : public solver::TapedDynamics {
 public:
  FlowDynamics(CharacteristicField field, Vec theta2, TraceEstimator estimator);

  Index state_dim() const override { return field_.n + field_.k + 1; }
  const Vec& params() const override { return theta2_; }
  int record(diffcore::Tape& tape, double s, int y, int theta) const override;

  const CharacteristicField& field() const { return field_; }

 private:
  CharacteristicField field_;
  Vec theta2_;
  TraceEstimator estimator_;
  std::vector<Vec> probes_;
};

// Continuous normalizing flow: base density at s0, data at s1. Likelihood
// needs the u-dynamics to be a function of u alone, so the field must be
// unconditioned, have a u-only Jacobian net, and a direction that does not
// read x (or a unit direction).
struct Cnf {
  CharacteristicField field;
  Vec x0;
  double s0 = 0.0;
  double s1 = 1.0;
  TraceEstimator estimator;
  solver::SolverConfig solver;

  BaseDensity base() const { return BaseDensity{field.n}; }
  void validate() const;
};

// C-NODE flow over R^n: du/ds = J(u) a(u) with both nets reading u only.
Cnf make_cnf(Index n, Index k, const std::vector<Index>& direction_hidden,
             const std::vector<Index>& jac_hidden,
             diffcore::Activation act = diffcore::Activation::kTanh,
             bool unit_direction = false);

// Fresh parameters for the flow's field nets, packed in theta2 layout.
Vec init_theta2(const Cnf& cnf, diffcore::Rng& rng);

struct LogProbResult {
  double log_prob = 0.0;
  Vec u0;
  double delta0 = 0.0;
  solver::SolveStats stats;
};

// Integrates [v; x0; 0] from s1 down to s0 and applies the base density.
LogProbResult log_prob(const Cnf& cnf, const Vec& theta2, const Vec& v);

struct PushForwardResult {
  Vec v;
  Vec x_end;
  double delta1 = 0.0;
  solver::SolveStats stats;
};

// Integrates [u0; x0; 0] from s0 up to s1; log density of v is
// base.log_prob(u0) + delta1.
PushForwardResult push_forward(const Cnf& cnf, const Vec& theta2, const Vec& u0);

// count base draws pushed forward; row i is one sample. Deterministic in
// seed. The trace accumulator is skipped, samples only need u and x.
Mat sample(const Cnf& cnf, const Vec& theta2, Index count, std::uint64_t seed);

struct NllGradient {
  double nll = 0.0;
  Vec grad;
  long nfe_forward = 0;
  long nfe_adjoint = 0;
};

// Negative log-likelihood of one data point and its adjoint gradient in
// theta2. The estimator argument lets training vary Hutchinson probes per
// solve while evaluation keeps the flow's own (typically exact) estimator.
NllGradient nll_gradient(const Cnf& cnf, const Vec& theta2, const Vec& v,
                         const TraceEstimator& estimator);

struct CnfTrainConfig {
  int epochs = 100;
  Index batch_size = 32;
  diffcore::AdamConfig adam;
  std::uint64_t seed = 1;
  int parallel = 1;
};

struct CnfEpoch {
  int epoch = 0;
  double nll = 0.0;
  double nfe_forward = 0.0;
  double nfe_adjoint = 0.0;
};

struct CnfTrainResult {
  Vec theta2;
  std::vector<CnfEpoch> history;
  bool diverged = false;
};

CnfTrainResult train_cnf(const Cnf& cnf, Vec theta2,
                         const std::vector<Vec>& data,
                         const CnfTrainConfig& cfg);

double evaluate_nll(const Cnf& cnf, const Vec& theta2,
                    const std::vector<Vec>& data);

inline double bits_per_dim(double nll_nats, Index n) {
  return nll_nats / (static_cast<double>(n) * std::log(2.0));
}

}  // namespace cnode::density
