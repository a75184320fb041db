#pragma once

#include <string>
#include <vector>

#include "cnode/adam.hpp"
#include "cnode/model.hpp"

namespace cnode::model {

enum class Loss { kMse, kCrossEntropy };
enum class GradMode { kAdjoint, kDiscrete };

Loss parse_loss(const std::string& name);
GradMode parse_grad_mode(const std::string& name);
std::string grad_mode_name(GradMode m);

struct Example {
  Vec z;
  Vec target;                      // regression target (mse)
  int label = -1;                  // class index (cross-entropy)
  double horizon = std::nan("");   // per-example span end; NaN uses model.s1
};
using Dataset = std::vector<Example>;

struct TrainConfig {
  int epochs = 100;
  int batch_size = 32;
  Loss loss = Loss::kMse;
  GradMode grad_mode = GradMode::kDiscrete;
  diffcore::AdamConfig adam;
  std::uint64_t seed = 1;
  int parallel = 1;  // batch shards evaluated on worker threads
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double metric = 0.0;        // mse again, or accuracy for classification
  double nfe_forward = 0.0;   // mean dynamics evaluations per example
  double nfe_gradient = 0.0;
};

struct TrainResult {
  ParamVector params;
  std::vector<EpochRecord> history;
  bool diverged = false;  // params roll back to the last finite epoch
};

struct ExampleGrad {
  Vec grad;  // flat, matching the model's parameter layout
  double loss = 0.0;
  double metric = 0.0;
  long nfe_forward = 0;
  long nfe_gradient = 0;
};

// Loss, metric, and full-parameter gradient for a single example. The head
// and loss are differentiated on a tape; the solve is differentiated by the
// chosen mode; the feature net receives the chained cotangent, including the
// conditioning path when the field is conditioned on u(s0).
ExampleGrad example_gradient(const CnodeModel& model, const ParamVector& params,
                             const Example& ex, Loss loss, GradMode mode);

TrainResult train(const CnodeModel& model, ParamVector init,
                  const Dataset& data, const TrainConfig& cfg);

double evaluate_mse(const CnodeModel& model, const ParamVector& params,
                    const Dataset& data);
double evaluate_accuracy(const CnodeModel& model, const ParamVector& params,
                         const Dataset& data);

}  // namespace cnode::model
