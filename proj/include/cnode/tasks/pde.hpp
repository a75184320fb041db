#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cnode/adam.hpp"
#include "cnode/mlp.hpp"
#include "cnode/param_vector.hpp"

namespace cnode::tasks {

using diffcore::MlpSpec;
using diffcore::ParamVector;

// Reference solution u(x,t) = 2x e^t / (2 e^t + 1) of u u_x + u_t = u,
// sampled on [1,2]x[0,1].
double analytic_u(double x, double t);

struct PdePoint {
  double x = 0.0;
  double t = 0.0;
  double u = 0.0;
};

struct PdeDataset {
  std::vector<PdePoint> train;
  std::vector<PdePoint> test;
  std::uint64_t seed = 0;
};

// Uniform samples on [1,2]x[0,1] with analytic targets.
PdeDataset gen_pde_dataset(Index n_train, Index n_test, std::uint64_t seed);

// CSV text with header "x,t,u", one row per point.
std::string pde_csv(const std::vector<PdePoint>& points);

// Four-net regression model. nn1 and nn2 map (x,t) to a scalar rate, nn3
// maps the boundary value to the two characteristic rates, nn4 maps the
// foot point to the boundary value.
struct PdeNets {
  MlpSpec nn1;
  MlpSpec nn2;
  MlpSpec nn3;
  MlpSpec nn4;

  Index param_count() const;
  void validate() const;
};

// 12-wide two-hidden-layer nets, 809 parameters total.
PdeNets default_pde_nets();

// Single-net baseline integrating a learned time rate from zero; 32-wide,
// 1185 parameters.
MlpSpec default_node_pde_net();

ParamVector init_pde_params(const PdeNets& nets, diffcore::Rng& rng);
ParamVector init_node_pde_params(const MlpSpec& net, diffcore::Rng& rng);

struct PdeFitConfig {
  int epochs = 400;
  Index batch_size = 32;
  diffcore::AdamConfig adam;
  std::uint64_t init_seed = 1;
  std::uint64_t shuffle_seed = 2;
  int quad_steps = 20;
  double fp_tol = 1e-8;
  int fp_max_iters = 100;
  double flag_budget = 0.05;
  int parallel = 1;
};

struct PdeForward {
  double pred = 0.0;
  double iota = 0.0;  // converged foot of the characteristic through (x,t)
  int fp_iters = 0;
  bool converged = true;
};

// Pure evaluation of the four-step prediction at one point.
PdeForward pde_forward(const PdeNets& nets, const ParamVector& params,
                       double x, double t, const PdeFitConfig& cfg);

double node_pde_forward(const MlpSpec& net, const ParamVector& params,
                        double x, double t, const PdeFitConfig& cfg);

struct PdeEpoch {
  int epoch = 0;
  double loss = 0.0;
  long flagged = 0;
  int max_fp_iters = 0;
};

struct PdeFitResult {
  ParamVector params;
  std::vector<PdeEpoch> history;
  double train_deviation_pct = 0.0;
  double test_deviation_pct = 0.0;
  int max_fp_iters = 0;
  bool diverged = false;
};

// Trains by mse on the train split, then reports percent deviation on both
// splits. Throws TaskError if more than flag_budget of an epoch's samples
// fail the fixed-point solve.
PdeFitResult pde_fit(const PdeDataset& data, const PdeNets& nets,
                     const PdeFitConfig& cfg);

PdeFitResult node_pde_baseline(const PdeDataset& data, const MlpSpec& net,
                               const PdeFitConfig& cfg);

// mean(|pred - truth| / |truth|) * 100.
double percent_deviation(const std::vector<double>& pred,
                         const std::vector<double>& truth);

}  // namespace cnode::tasks
