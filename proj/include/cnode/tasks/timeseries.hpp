#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "cnode/model.hpp"
#include "cnode/train.hpp"

namespace cnode::tasks {

struct TsSample {
  double t = 0.0;
  double target = 0.0;
};

// Scalar curve observations with the spatial coordinate hidden: targets are
// u(x,t) + sigma * eps with x drawn fresh per sample and never exposed.
// Window w holds test samples with t in [w, w+1].
struct TsDataset {
  std::vector<TsSample> train;
  std::array<std::vector<TsSample>, 6> windows;
  double anchor = 0.0;  // u(1,0), the one value the model is given
  double sigma = 0.1;
  std::uint64_t seed = 0;
};

TsDataset gen_ts_dataset(Index n_train, Index per_window, double sigma,
                         std::uint64_t seed, double x_lo = 1.0,
                         double x_hi = 2.0);

enum class TsKind { kNode, kCnode };

// Both models integrate from u(0) = anchor with a per-sample horizon t.
// The characteristic variant drives an 8-dimensional curve; the baseline
// integrates du/ds = f(u) directly (unit direction, k = 1).
model::CnodeModel make_ts_model(TsKind kind);

model::Dataset ts_to_examples(const TsDataset& data);

struct TsResult {
  diffcore::ParamVector params;
  std::vector<model::EpochRecord> history;
  std::array<double, 6> deviation_pct{};
  double train_mse = 0.0;
  bool diverged = false;
};

TsResult timeseries_eval(TsKind kind, const TsDataset& data,
                         const model::TrainConfig& cfg);

}  // namespace cnode::tasks
