#include "cnode/tape.hpp"

#include <atomic>
#include <cmath>

namespace cnode::diffcore {

namespace {

std::atomic<long> g_live_tapes{0};
std::atomic<long> g_live_nodes{0};
std::atomic<long> g_peak_live_nodes{0};

void bump_peak() {
  long cur = g_live_nodes.load();
  long peak = g_peak_live_nodes.load();
  while (cur > peak && !g_peak_live_nodes.compare_exchange_weak(peak, cur)) {
  }
}

Vec stable_log_softmax(const Vec& x) {
  const double m = x.maxCoeff();
  const double lse = std::log((x.array() - m).exp().sum()) + m;
  return x.array() - lse;
}

}  // namespace

Tape::Tape() { ++g_live_tapes; }

Tape::~Tape() {
  g_live_nodes -= static_cast<long>(nodes_.size());
  --g_live_tapes;
}

long Tape::live_tapes() { return g_live_tapes.load(); }
long Tape::live_nodes() { return g_live_nodes.load(); }
long Tape::peak_live_nodes() { return g_peak_live_nodes.load(); }
void Tape::reset_peak() { g_peak_live_nodes.store(g_live_nodes.load()); }

int Tape::check(int id) const {
  if (id < 0 || id >= size()) {
    throw ContractError("Tape: node id " + std::to_string(id) +
                        " out of range");
  }
  return id;
}

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  ++g_live_nodes;
  bump_peak();
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(Tensor v) { return push({Op::kLeaf, -1, -1, 0, 0.0, std::move(v)}); }
int Tape::constant(Tensor v) { return push({Op::kConst, -1, -1, 0, 0.0, std::move(v)}); }

int Tape::add(int a, int b) {
  check(a), check(b);
  if (!val(a).same_shape(val(b))) throw DimensionError("Tape::add", val(a).size(), val(b).size());
  return push({Op::kAdd, a, b, 0, 0.0, Tensor(val(a).shape(), val(a).data() + val(b).data())});
}

int Tape::sub(int a, int b) {
  check(a), check(b);
  if (!val(a).same_shape(val(b))) throw DimensionError("Tape::sub", val(a).size(), val(b).size());
  return push({Op::kSub, a, b, 0, 0.0, Tensor(val(a).shape(), val(a).data() - val(b).data())});
}

int Tape::mul(int a, int b) {
  check(a), check(b);
  if (!val(a).same_shape(val(b))) throw DimensionError("Tape::mul", val(a).size(), val(b).size());
  return push({Op::kMul, a, b, 0, 0.0,
               Tensor(val(a).shape(), (val(a).data().array() * val(b).data().array()).matrix())});
}

int Tape::neg(int a) {
  check(a);
  return push({Op::kNeg, a, -1, 0, 0.0, Tensor(val(a).shape(), -val(a).data())});
}

int Tape::scale(int a, double c) {
  check(a);
  return push({Op::kScale, a, -1, 0, c, Tensor(val(a).shape(), c * val(a).data())});
}

int Tape::matvec(int a, int b) {
  check(a), check(b);
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (ta.rank() != 2) throw ContractError("Tape::matvec: lhs must be rank 2");
  if (ta.cols() != tb.size()) throw DimensionError("Tape::matvec", ta.cols(), tb.size());
  Vec y = ta.mat() * tb.data();
  return push({Op::kMatVec, a, b, 0, 0.0, Tensor::vector(std::move(y))});
}

int Tape::transpose(int a) {
  check(a);
  const Tensor& ta = val(a);
  if (ta.rank() != 2) throw ContractError("Tape::transpose: rank 2 required");
  return push({Op::kTranspose, a, -1, 0, 0.0, Tensor::matrix(ta.mat().transpose())});
}

int Tape::outer(int a, int b) {
  check(a), check(b);
  if (val(a).rank() != 1 || val(b).rank() != 1) {
    throw ContractError("Tape::outer: rank 1 inputs required");
  }
  Mat m = val(a).data() * val(b).data().transpose();
  return push({Op::kOuter, a, b, 0, 0.0, Tensor::matrix(m)});
}

int Tape::tanh(int a) {
  check(a);
  return push({Op::kTanh, a, -1, 0, 0.0,
               Tensor(val(a).shape(), val(a).data().array().tanh().matrix())});
}

int Tape::relu(int a) {
  check(a);
  return push({Op::kRelu, a, -1, 0, 0.0,
               Tensor(val(a).shape(), val(a).data().array().max(0.0).matrix())});
}

int Tape::heaviside(int a) {
  check(a);
  Vec y = (val(a).data().array() > 0.0).cast<double>();
  return push({Op::kHeaviside, a, -1, 0, 0.0, Tensor(val(a).shape(), std::move(y))});
}

int Tape::exp(int a) {
  check(a);
  return push({Op::kExp, a, -1, 0, 0.0,
               Tensor(val(a).shape(), val(a).data().array().exp().matrix())});
}

int Tape::sum(int a) {
  check(a);
  return push({Op::kSum, a, -1, 0, 0.0, Tensor::scalar(val(a).data().sum())});
}

int Tape::dot(int a, int b) {
  check(a), check(b);
  if (val(a).size() != val(b).size()) throw DimensionError("Tape::dot", val(a).size(), val(b).size());
  return push({Op::kDot, a, b, 0, 0.0, Tensor::scalar(val(a).data().dot(val(b).data()))});
}

int Tape::pick(int a, Index i) {
  check(a);
  if (i < 0 || i >= val(a).size()) throw DimensionError("Tape::pick", val(a).size(), i);
  return push({Op::kPick, a, -1, i, 0.0, Tensor::scalar(val(a).data()[i])});
}

int Tape::slice(int a, Index offset, Index len) {
  check(a);
  if (offset < 0 || len < 0 || offset + len > val(a).size()) {
    throw DimensionError("Tape::slice", val(a).size(), offset + len);
  }
  return push({Op::kSlice, a, -1, offset, 0.0,
               Tensor::vector(val(a).data().segment(offset, len))});
}

int Tape::concat(int a, int b) {
  check(a), check(b);
  Vec y(val(a).size() + val(b).size());
  y << val(a).data(), val(b).data();
  return push({Op::kConcat, a, b, 0, 0.0, Tensor::vector(std::move(y))});
}

int Tape::reshape(int a, std::vector<Index> shape) {
  check(a);
  if (Tensor::count(shape) != val(a).size()) {
    throw DimensionError("Tape::reshape", val(a).size(), Tensor::count(shape));
  }
  return push({Op::kReshape, a, -1, 0, 0.0, Tensor(std::move(shape), val(a).data())});
}

int Tape::broadcast(int a, Index n) {
  check(a);
  if (val(a).size() != 1) throw ContractError("Tape::broadcast: scalar input required");
  return push({Op::kBroadcast, a, -1, n, 0.0,
               Tensor::vector(Vec::Constant(n, val(a).data()[0]))});
}

int Tape::pad(int a, Index total, Index offset) {
  check(a);
  if (val(a).rank() != 1) throw ContractError("Tape::pad: rank 1 input required");
  if (offset < 0 || offset + val(a).size() > total) {
    throw DimensionError("Tape::pad", total, offset + val(a).size());
  }
  Vec y = Vec::Zero(total);
  y.segment(offset, val(a).size()) = val(a).data();
  return push({Op::kPad, a, -1, offset, 0.0, Tensor::vector(std::move(y))});
}

int Tape::softmax(int a) {
  check(a);
  if (val(a).rank() != 1) throw ContractError("Tape::softmax: rank 1 input required");
  Vec y = stable_log_softmax(val(a).data()).array().exp();
  return push({Op::kSoftmax, a, -1, 0, 0.0, Tensor::vector(std::move(y))});
}

int Tape::log_softmax(int a) {
  check(a);
  if (val(a).rank() != 1) throw ContractError("Tape::log_softmax: rank 1 input required");
  return push({Op::kLogSoftmax, a, -1, 0, 0.0,
               Tensor::vector(stable_log_softmax(val(a).data()))});
}

std::vector<Vec> Tape::backward(int out) const {
  if (val(check(out)).size() != 1) {
    throw ContractError("Tape::backward: output node must be scalar");
  }
  return backward_seeded(out, Vec::Constant(1, 1.0));
}

std::vector<Vec> Tape::backward_seeded(int out, const Vec& cotangent) const {
  check(out);
  if (cotangent.size() != val(out).size()) {
    throw DimensionError("Tape::backward_seeded", val(out).size(), cotangent.size());
  }
  std::vector<Vec> adj(nodes_.size());
  auto acc = [&](int id, const Vec& g) {
    if (adj[id].size() == 0) {
      adj[id] = g;
    } else {
      adj[id] += g;
    }
  };
  adj[out] = cotangent;
  for (int i = out; i >= 0; --i) {
    if (adj[i].size() == 0) continue;
    const Node& n = nodes_[i];
    const Vec& g = adj[i];
    switch (n.op) {
      case Op::kLeaf:
      case Op::kConst:
      case Op::kHeaviside:
        break;
      case Op::kAdd:
        acc(n.a, g);
        acc(n.b, g);
        break;
      case Op::kSub:
        acc(n.a, g);
        acc(n.b, -g);
        break;
      case Op::kMul:
        acc(n.a, (g.array() * val(n.b).data().array()).matrix());
        acc(n.b, (g.array() * val(n.a).data().array()).matrix());
        break;
      case Op::kNeg:
        acc(n.a, -g);
        break;
      case Op::kScale:
        acc(n.a, n.c * g);
        break;
      case Op::kMatVec: {
        const auto A = val(n.a).mat();
        Mat ga = g * val(n.b).data().transpose();
        acc(n.a, Tensor::matrix(ga).data());
        acc(n.b, A.transpose() * g);
        break;
      }
      case Op::kTranspose: {
        Eigen::Map<const RowMat> gm(g.data(), n.value.rows(), n.value.cols());
        acc(n.a, Tensor::matrix(gm.transpose()).data());
        break;
      }
      case Op::kOuter: {
        Eigen::Map<const RowMat> gm(g.data(), n.value.rows(), n.value.cols());
        acc(n.a, gm * val(n.b).data());
        acc(n.b, gm.transpose() * val(n.a).data());
        break;
      }
      case Op::kTanh:
        acc(n.a, (g.array() * (1.0 - n.value.data().array().square())).matrix());
        break;
      case Op::kRelu:
        acc(n.a, (g.array() * (val(n.a).data().array() > 0.0).cast<double>()).matrix());
        break;
      case Op::kExp:
        acc(n.a, (g.array() * n.value.data().array()).matrix());
        break;
      case Op::kSum:
        acc(n.a, Vec::Constant(val(n.a).size(), g[0]));
        break;
      case Op::kDot:
        acc(n.a, g[0] * val(n.b).data());
        acc(n.b, g[0] * val(n.a).data());
        break;
      case Op::kPick: {
        Vec ga = Vec::Zero(val(n.a).size());
        ga[n.i0] = g[0];
        acc(n.a, ga);
        break;
      }
      case Op::kSlice: {
        Vec ga = Vec::Zero(val(n.a).size());
        ga.segment(n.i0, g.size()) = g;
        acc(n.a, ga);
        break;
      }
      case Op::kConcat:
        acc(n.a, g.head(val(n.a).size()));
        acc(n.b, g.tail(val(n.b).size()));
        break;
      case Op::kReshape:
        acc(n.a, g);
        break;
      case Op::kBroadcast:
        acc(n.a, Vec::Constant(1, g.sum()));
        break;
      case Op::kPad:
        acc(n.a, g.segment(n.i0, val(n.a).size()));
        break;
      case Op::kSoftmax: {
        const Vec& y = n.value.data();
        acc(n.a, (y.array() * (g.array() - g.dot(y))).matrix());
        break;
      }
      case Op::kLogSoftmax: {
        const Vec& y = n.value.data();
        acc(n.a, g - g.sum() * y.array().exp().matrix());
        break;
      }
    }
  }
  return adj;
}

int Tape::append_vjp(int out, int seed, int wrt) {
  check(out), check(seed), check(wrt);
  if (!val(seed).same_shape(val(out))) {
    throw DimensionError("Tape::append_vjp", val(out).size(), val(seed).size());
  }
  // Restrict the sweep to nodes lying on a path wrt -> out.
  std::vector<char> from_wrt(out + 1, 0), to_out(out + 1, 0);
  from_wrt[wrt] = 1;
  for (int i = wrt + 1; i <= out; ++i) {
    const Node& n = nodes_[i];
    from_wrt[i] = (n.a >= 0 && from_wrt[n.a]) || (n.b >= 0 && from_wrt[n.b]);
  }
  to_out[out] = 1;
  for (int i = out; i >= 0; --i) {
    if (!to_out[i]) continue;
    const Node& n = nodes_[i];
    if (n.a >= 0) to_out[n.a] = 1;
    if (n.b >= 0) to_out[n.b] = 1;
  }
  auto active = [&](int id) {
    return id >= 0 && id <= out && from_wrt[id] && to_out[id];
  };
  if (!active(out) || !active(wrt)) {
    return constant(Tensor::zeros_like(val(wrt)));
  }

  std::vector<int> cot(out + 1, -1);
  auto acc = [&](int id, int g) {
    if (!active(id)) return;
    cot[id] = (cot[id] < 0) ? g : add(cot[id], g);
  };
  cot[out] = seed;
  for (int i = out; i >= 0; --i) {
    if (cot[i] < 0 || i == wrt) continue;
    const Node n = nodes_[i];  // copy: push invalidates references
    const int g = cot[i];
    switch (n.op) {
      case Op::kLeaf:
      case Op::kConst:
      case Op::kHeaviside:
        break;
      case Op::kAdd:
        acc(n.a, g);
        acc(n.b, g);
        break;
      case Op::kSub:
        acc(n.a, g);
        if (active(n.b)) acc(n.b, neg(g));
        break;
      case Op::kMul:
        if (active(n.a)) acc(n.a, mul(g, n.b));
        if (active(n.b)) acc(n.b, mul(g, n.a));
        break;
      case Op::kNeg:
        if (active(n.a)) acc(n.a, neg(g));
        break;
      case Op::kScale:
        if (active(n.a)) acc(n.a, scale(g, n.c));
        break;
      case Op::kMatVec:
        if (active(n.a)) acc(n.a, outer(g, n.b));
        if (active(n.b)) acc(n.b, matvec(transpose(n.a), g));
        break;
      case Op::kTranspose:
        if (active(n.a)) acc(n.a, transpose(g));
        break;
      case Op::kOuter:
        if (active(n.a)) acc(n.a, matvec(g, n.b));
        if (active(n.b)) acc(n.b, matvec(transpose(g), n.a));
        break;
      case Op::kTanh:
        if (active(n.a)) {
          const int ones = constant(Tensor(val(i).shape(), Vec::Ones(val(i).size())));
          acc(n.a, mul(g, sub(ones, mul(i, i))));
        }
        break;
      case Op::kRelu:
        if (active(n.a)) acc(n.a, mul(g, heaviside(n.a)));
        break;
      case Op::kExp:
        if (active(n.a)) acc(n.a, mul(g, i));
        break;
      case Op::kSum:
        if (active(n.a)) acc(n.a, broadcast(g, val(n.a).size()));
        break;
      case Op::kDot:
        if (active(n.a)) acc(n.a, mul(broadcast(g, val(n.a).size()), n.b));
        if (active(n.b)) acc(n.b, mul(broadcast(g, val(n.b).size()), n.a));
        break;
      case Op::kPick:
        if (active(n.a)) acc(n.a, pad(g, val(n.a).size(), n.i0));
        break;
      case Op::kSlice:
        if (active(n.a)) acc(n.a, pad(g, val(n.a).size(), n.i0));
        break;
      case Op::kConcat:
        if (active(n.a)) acc(n.a, slice(g, 0, val(n.a).size()));
        if (active(n.b)) acc(n.b, slice(g, val(n.a).size(), val(n.b).size()));
        break;
      case Op::kReshape:
        if (active(n.a)) acc(n.a, reshape(g, val(n.a).shape()));
        break;
      case Op::kBroadcast:
        if (active(n.a)) acc(n.a, sum(g));
        break;
      case Op::kPad:
        if (active(n.a)) acc(n.a, slice(g, n.i0, val(n.a).size()));
        break;
      case Op::kSoftmax:
        if (active(n.a)) acc(n.a, mul(i, sub(g, broadcast(dot(g, i), val(n.a).size()))));
        break;
      case Op::kLogSoftmax:
        if (active(n.a)) acc(n.a, sub(g, mul(exp(i), broadcast(sum(g), val(n.a).size()))));
        break;
    }
  }
  if (cot[wrt] < 0) return constant(Tensor::zeros_like(val(wrt)));
  return cot[wrt];
}

}  // namespace cnode::diffcore
