#pragma once

#include <cstdint>
#include <vector>

#include "cnode/tensor.hpp"

namespace cnode::diffcore {

enum class Op : std::uint8_t {
  kLeaf,
  kConst,
  kAdd,
  kSub,
  kMul,
  kNeg,
  kScale,
  kMatVec,
  kTranspose,
  kOuter,
  kTanh,
  kRelu,
  kHeaviside,
  kExp,
  kSum,
  kDot,
  kPick,
  kSlice,
  kConcat,
  kReshape,
  kBroadcast,
  kPad,
  kSoftmax,
  kLogSoftmax,
};

// Append-only operation tape with eager values. Node ids are topologically
// ordered, so a single reverse sweep computes adjoints.
//
// Two differentiation modes:
//   * backward/backward_seeded: numeric reverse sweep into plain buffers.
//   * append_vjp: appends the vector-Jacobian product as new tape nodes,
//     so the result is itself differentiable (needed wherever a derivative
//     appears inside a quantity that is differentiated again).
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  int size() const { return static_cast<int>(nodes_.size()); }
  const Tensor& value(int id) const { return nodes_[check(id)].value; }
  Op op(int id) const { return nodes_[check(id)].op; }

  int leaf(Tensor v);
  int constant(Tensor v);
  int constant_scalar(double v) { return constant(Tensor::scalar(v)); }

  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);  // elementwise
  int neg(int a);
  int scale(int a, double c);
  int matvec(int a, int b);  // rank-2 a times rank-1 b
  int transpose(int a);
  int outer(int a, int b);
  int tanh(int a);
  int relu(int a);
  int heaviside(int a);  // piecewise-constant, zero gradient
  int exp(int a);
  int sum(int a);
  int dot(int a, int b);
  int pick(int a, Index i);
  int slice(int a, Index offset, Index len);
  int concat(int a, int b);
  int reshape(int a, std::vector<Index> shape);
  int broadcast(int a, Index n);           // scalar to length-n vector
  int pad(int a, Index total, Index offset);  // embed into zeros
  int softmax(int a);
  int log_softmax(int a);

  // Adjoint of every node w.r.t. scalar node `out`, indexed by node id.
  // Entries never touched by the sweep have size 0.
  std::vector<Vec> backward(int out) const;
  std::vector<Vec> backward_seeded(int out, const Vec& cotangent) const;

  // Appends nodes computing d(seed . out)/d(wrt); returns the id of the
  // accumulated cotangent at `wrt` (a zero constant if nothing reaches it).
  int append_vjp(int out, int seed, int wrt);

  // Process-wide gauges for the live-memory tests.
  static long live_tapes();
  static long live_nodes();
  static long peak_live_nodes();
  static void reset_peak();

 private:
  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    Index i0 = 0;  // slice/pad offset, pick index, broadcast length
    double c = 0.0;
    Tensor value;
  };

  int check(int id) const;
  int push(Node n);
  const Tensor& val(int id) const { return nodes_[id].value; }

  std::vector<Node> nodes_;
};

}  // namespace cnode::diffcore
