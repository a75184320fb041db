#include "cnode/tasks/toy.hpp"

#include <cmath>
#include <cstdio>

#include "cnode/rng.hpp"

namespace cnode::tasks {

ToyKind parse_toy_kind(const std::string& name) {
  if (name == "annuli") return ToyKind::kAnnuli;
  if (name == "reflection") return ToyKind::kReflection;
  if (name == "gaussian_mixture") return ToyKind::kGaussianMixture;
  throw ConfigError("unknown toy dataset '" + name + "'");
}

std::string toy_kind_name(ToyKind kind) {
  switch (kind) {
    case ToyKind::kAnnuli: return "annuli";
    case ToyKind::kReflection: return "reflection";
    case ToyKind::kGaussianMixture: return "gaussian_mixture";
  }
  throw ContractError("bad toy kind");
}

Toy2d gen_toy2d(ToyKind kind, Index count, std::uint64_t seed) {
  if (count <= 0) throw ContractError("gen_toy2d: count must be positive");
  diffcore::Rng rng(seed);
  Toy2d data;
  data.kind = kind;
  data.seed = seed;

  switch (kind) {
    case ToyKind::kAnnuli: {
      data.inputs.resize(count, 2);
      data.labels.resize(static_cast<std::size_t>(count));
      for (Index i = 0; i < count; ++i) {
        const int label = static_cast<int>(i % 2);
        const double radius =
            (label == 0 ? 1.0 : 2.0) + rng.uniform(-0.125, 0.125);
        const double angle = rng.uniform(0.0, 2.0 * M_PI);
        data.inputs(i, 0) = radius * std::cos(angle);
        data.inputs(i, 1) = radius * std::sin(angle);
        data.labels[static_cast<std::size_t>(i)] = label;
      }
      break;
    }
    case ToyKind::kReflection: {
      data.inputs.resize(count, 1);
      data.targets.resize(count);
      for (Index i = 0; i < count; ++i) {
        const double v = rng.uniform(-2.0, 2.0);
        data.inputs(i, 0) = v;
        data.targets[i] = -v;
      }
      break;
    }
    case ToyKind::kGaussianMixture: {
      data.inputs.resize(count, 2);
      for (Index i = 0; i < count; ++i) {
        const double mean = (i % 2 == 0) ? -2.0 : 2.0;
        data.inputs(i, 0) = mean + rng.normal();
        data.inputs(i, 1) = rng.normal();
      }
      break;
    }
  }
  return data;
}

std::vector<Vec> toy_rows(const Toy2d& data) {
  std::vector<Vec> rows;
  rows.reserve(static_cast<std::size_t>(data.inputs.rows()));
  for (Index i = 0; i < data.inputs.rows(); ++i) {
    rows.push_back(data.inputs.row(i).transpose());
  }
  return rows;
}

std::string toy_csv(const Toy2d& data) {
  std::string out = "v1,v2,label\n";
  char buf[96];
  for (Index i = 0; i < data.inputs.rows(); ++i) {
    const double v1 = data.inputs(i, 0);
    const double v2 = data.inputs.cols() > 1 ? data.inputs(i, 1)
                                             : data.targets[i];
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,", v1, v2);
    out += buf;
    if (!data.labels.empty()) out += std::to_string(data.labels[i]);
    out += '\n';
  }
  return out;
}

}  // namespace cnode::tasks
