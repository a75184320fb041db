#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cnode/tape.hpp"

namespace cnode::diffcore {

// A differentiable scalar-valued graph: leaves plus a builder that records
// the computation on any tape. Rebuilding under perturbed leaves gives the
// finite-difference oracle.
struct GradCase {
  std::vector<Tensor> leaves;
  std::function<int(Tape&, const std::vector<int>&)> build;
};

// Largest scaled deviation |backward - central_fd| / max(1, |fd|) over all
// leaf entries.
double max_grad_error(const GradCase& gc, double h = 1e-5);

struct GradCheckResult {
  std::string primitive;
  int instances = 0;
  double max_error = 0.0;
};

// Random instances for every differentiable tape primitive, checked against
// central finite differences. One result row per primitive.
std::vector<GradCheckResult> run_gradcheck(std::uint64_t seed, int instances);

}  // namespace cnode::diffcore
