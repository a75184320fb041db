#include "cnode/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "cnode/rng.hpp"

namespace cnode::diffcore {

namespace {

double eval_case(const GradCase& gc, const std::vector<Tensor>& leaves) {
  Tape tape;
  std::vector<int> ids;
  ids.reserve(leaves.size());
  for (const auto& t : leaves) ids.push_back(tape.leaf(t));
  const int out = gc.build(tape, ids);
  return tape.value(out).value();
}

// Random values kept away from zero so kink ops (relu, heaviside) are
// differentiable at every sampled point.
Tensor random_tensor(Rng& rng, std::vector<Index> shape) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) {
    double v = rng.normal();
    if (std::abs(v) < 0.1) v = v < 0 ? v - 0.1 : v + 0.1;
    t.data()[i] = v;
  }
  return t;
}

// Fixed random projection to a scalar; the weights travel with the case so
// rebuilds under perturbed leaves see the identical graph.
int project(Tape& t, int node, const Vec& w) {
  const Index n = t.value(node).size();
  int flat = node;
  if (t.value(node).rank() != 1) flat = t.reshape(node, {n});
  return t.dot(flat, t.constant(Tensor::vector(w)));
}

}  // namespace

double max_grad_error(const GradCase& gc, double h) {
  Tape tape;
  std::vector<int> ids;
  ids.reserve(gc.leaves.size());
  for (const auto& t : gc.leaves) ids.push_back(tape.leaf(t));
  const int out = gc.build(tape, ids);
  const auto adj = tape.backward(out);

  double worst = 0.0;
  for (std::size_t li = 0; li < gc.leaves.size(); ++li) {
    for (Index j = 0; j < gc.leaves[li].size(); ++j) {
      auto plus = gc.leaves;
      auto minus = gc.leaves;
      plus[li].data()[j] += h;
      minus[li].data()[j] -= h;
      const double fd = (eval_case(gc, plus) - eval_case(gc, minus)) / (2.0 * h);
      const double g = adj[ids[li]].size() > 0 ? adj[ids[li]][j] : 0.0;
      worst = std::max(worst, std::abs(g - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

std::vector<GradCheckResult> run_gradcheck(std::uint64_t seed, int instances) {
  Rng rng(seed);
  std::vector<GradCheckResult> results;

  auto run = [&](const std::string& name,
                 const std::function<GradCase(Rng&)>& make) {
    GradCheckResult res{name, instances, 0.0};
    for (int i = 0; i < instances; ++i) {
      res.max_error = std::max(res.max_error, max_grad_error(make(rng)));
    }
    results.push_back(res);
  };

  auto dim = [](Rng& r) { return static_cast<Index>(2 + r.below(4)); };

  run("add", [&](Rng& r) {
    const Index n = dim(r);
    const Vec w = r.normal_vec(n);
    return GradCase{{random_tensor(r, {n}), random_tensor(r, {n})},
                    [w](Tape& t, const std::vector<int>& l) {
                      return project(t, t.add(l[0], l[1]), w);
                    }};
  });
  run("sub", [&](Rng& r) {
    const Index n = dim(r);
    const Vec w = r.normal_vec(n);
    return GradCase{{random_tensor(r, {n}), random_tensor(r, {n})},
                    [w](Tape& t, const std::vector<int>& l) {
                      return project(t, t.sub(l[0], l[1]), w);
                    }};
  });
  run("mul", [&](Rng& r) {
    const Index n = dim(r);
    const Vec w = r.normal_vec(n);
    return GradCase{{random_tensor(r, {n}), random_tensor(r, {n})},
                    [w](Tape& t, const std::vector<int>& l) {
                      return project(t, t.mul(l[0], l[1]), w);
                    }};
  });
  run("neg", [&](Rng& r) {
    const Index n = dim(r);
    const Vec w = r.normal_vec(n);
    return GradCase{{random_tensor(r, {n})},
                    [w](Tape& t, const std::vector<int>& l) {
                      return project(t, t.neg(l[0]), w);
                    }};
  });
  run("scale", [&](Rng& r) {
    const Index n = dim(r);
    const double c = r.normal();
    const Vec w = r.normal_vec(n);
    return GradCase{{random_tensor(r, {n})},
                    [w, c](Tape& t, const std::vector<int>& l) {
                      return project(t, t.scale(l[0], c), w);
                    }};
  });
  run("matvec", [&](Rng& r) {
    const Index m = dim(r), n = dim(r);
    const Vec w = r.normal_vec(m);
    return GradCase{{random_tensor(r, {m, n}), random_tensor(r, {n})},
                    [w](Tape& t, const std::vector<int>& l) {
                      return project(t, t.matvec(l[0], l[1]), w);
                    }};
  });
  run("transpose", [&](Rng& r) {
    const Index m = dim(r), n = dim(r);
    const Vec w = r.normal_vec(m * n);
    return GradCase{{random_tensor(r, {m, n})},
                    [w](Tape& t, const std::vector<int>& l) {
                      return project(t, t.transpose(l[0]), w);
                    }};
  });
  run("outer", [&](Rng& r) {
    const Index m = dim(r), n = dim(r);
    const Vec w = r.normal_vec(m * n);
    return GradCase{{random_tensor(r, {m}), random_tensor(r, {n})},
                    [w](Tape& t, const std::vector<int>& l) {
                      return project(t, t.outer(l[0], l[1]), w);
                    }};
  });
  run("tanh", [&](Rng& r) {
    const Index n = dim(r);
    const Vec w = r.normal_vec(n);
    return GradCase{{random_tensor(r, {n})},
                    [w](Tape& t, const std::vector<int>& l) {
                      return project(t, t.tanh(l[0]), w);
                    }};
  });
  run("relu", [&](Rng& r) {
    const Index n = dim(r);
    const Vec w = r.normal_vec(n);
    return GradCase{{random_tensor(r, {n})},
                    [w](Tape& t, const std::vector<int>& l) {
                      return project(t, t.relu(l[0]), w);
                    }};
  });
  run("exp", [&](Rng& r) {
    const Index n = dim(r);
    const Vec w = r.normal_vec(n);
    return GradCase{{random_tensor(r, {n})},
                    [w](Tape& t, const std::vector<int>& l) {
                      return project(t, t.exp(l[0]), w);
                    }};
  });
  run("sum", [&](Rng& r) {
    return GradCase{{random_tensor(r, {dim(r)})},
                    [](Tape& t, const std::vector<int>& l) { return t.sum(l[0]); }};
  });
  run("dot", [&](Rng& r) {
    const Index n = dim(r);
    return GradCase{{random_tensor(r, {n}), random_tensor(r, {n})},
                    [](Tape& t, const std::vector<int>& l) {
                      return t.dot(l[0], l[1]);
                    }};
  });
  run("pick", [&](Rng& r) {
    const Index n = dim(r);
    const Index i = static_cast<Index>(r.below(static_cast<std::uint64_t>(n)));
    return GradCase{{random_tensor(r, {n})},
                    [i](Tape& t, const std::vector<int>& l) {
                      return t.pick(l[0], i);
                    }};
  });
  run("slice", [&](Rng& r) {
    const Index n = dim(r) + 2;
    const Index len = 2;
    const Index off = static_cast<Index>(r.below(static_cast<std::uint64_t>(n - len)));
    const Vec w = r.normal_vec(len);
    return GradCase{{random_tensor(r, {n})},
                    [w, off, len](Tape& t, const std::vector<int>& l) {
                      return project(t, t.slice(l[0], off, len), w);
                    }};
  });
  run("concat", [&](Rng& r) {
    const Index m = dim(r), n = dim(r);
    const Vec w = r.normal_vec(m + n);
    return GradCase{{random_tensor(r, {m}), random_tensor(r, {n})},
                    [w](Tape& t, const std::vector<int>& l) {
                      return project(t, t.concat(l[0], l[1]), w);
                    }};
  });
  run("reshape", [&](Rng& r) {
    const Index m = dim(r), n = dim(r);
    const Vec w = r.normal_vec(m * n);
    return GradCase{{random_tensor(r, {m * n})},
                    [w, m, n](Tape& t, const std::vector<int>& l) {
                      return project(t, t.reshape(l[0], {m, n}), w);
                    }};
  });
  run("broadcast", [&](Rng& r) {
    const Index n = dim(r);
    const Vec w = r.normal_vec(n);
    return GradCase{{random_tensor(r, {1})},
                    [w, n](Tape& t, const std::vector<int>& l) {
                      return project(t, t.broadcast(l[0], n), w);
                    }};
  });
  run("pad", [&](Rng& r) {
    const Index n = dim(r);
    const Index total = n + 3;
    const Index off = static_cast<Index>(r.below(4));
    const Vec w = r.normal_vec(total);
    return GradCase{{random_tensor(r, {n})},
                    [w, total, off](Tape& t, const std::vector<int>& l) {
                      return project(t, t.pad(l[0], total, off), w);
                    }};
  });
  run("softmax", [&](Rng& r) {
    const Index n = dim(r);
    const Vec w = r.normal_vec(n);
    return GradCase{{random_tensor(r, {n})},
                    [w](Tape& t, const std::vector<int>& l) {
                      return project(t, t.softmax(l[0]), w);
                    }};
  });
  run("log_softmax", [&](Rng& r) {
    const Index n = dim(r);
    const Vec w = r.normal_vec(n);
    return GradCase{{random_tensor(r, {n})},
                    [w](Tape& t, const std::vector<int>& l) {
                      return project(t, t.log_softmax(l[0]), w);
                    }};
  });

  return results;
}

}  // namespace cnode::diffcore
