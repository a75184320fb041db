#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cnode/common.hpp"

namespace cnode::tasks {

enum class ToyKind { kAnnuli, kReflection, kGaussianMixture };

ToyKind parse_toy_kind(const std::string& name);
std::string toy_kind_name(ToyKind kind);

// Small 2-D (or 1-D for the reflection map) datasets. inputs is count x dim;
// labels are set for annuli, targets for the reflection map, and mixture
// points carry neither.
struct Toy2d {
  ToyKind kind = ToyKind::kAnnuli;
  Mat inputs;
  Vec targets;
  std::vector<int> labels;
  std::uint64_t seed = 0;
};

// annuli: rings of radius 1 and 2 with radial jitter of 0.125, alternating
// labels. reflection: v ~ U(-2,2) with target -v. gaussian_mixture: equal
// halves from N((-2,0), I) and N((2,0), I).
Toy2d gen_toy2d(ToyKind kind, Index count, std::uint64_t seed);

// Mixture rows as points for flow training.
std::vector<Vec> toy_rows(const Toy2d& data);

// CSV text with header "v1,v2,label". The label column is blank for
// unlabeled kinds; reflection rows hold (input, target) in the value columns.
std::string toy_csv(const Toy2d& data);

}  // namespace cnode::tasks
