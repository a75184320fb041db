#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "cnode/adam.hpp"
#include "cnode/checkpoint.hpp"
#include "cnode/gradcheck.hpp"
#include "cnode/mlp.hpp"
#include "cnode/param_vector.hpp"
#include "cnode/rng.hpp"
#include "cnode/tape.hpp"

using namespace cnode;
using namespace cnode::diffcore;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_SUITE("diffcore") {

TEST_CASE("tensor shape bookkeeping") {
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK_THROWS_AS(Tensor({2, 2}, Vec::Zero(3)), DimensionError);
  CHECK_THROWS_AS(Tensor::scalar(1.0).rows(), ContractError);
  CHECK(Tensor::scalar(2.5).value() == 2.5);
  CHECK_THROWS_AS(Tensor::vector(Vec::Zero(2)).value(), ContractError);
}

TEST_CASE("param vector tiles segments disjointly in order") {
  Vec a = Vec::LinSpaced(3, 1.0, 3.0);
  Vec b = Vec::LinSpaced(2, 4.0, 5.0);
  auto pv = ParamVector::from_segments({{"theta1", a}, {"theta2", b}});
  CHECK(pv.size() == 5);
  CHECK(pv.segment_offset("theta1") == 0);
  CHECK(pv.segment_offset("theta2") == 3);
  CHECK(pv.segment("theta2")[1] == 5.0);

  pv.segment("theta1")[0] = 42.0;
  CHECK(pv.values()[0] == 42.0);

  auto parts = pv.split();
  REQUIRE(parts.size() == 2);
  CHECK(parts[0].first == "theta1");
  CHECK(parts[0].second[0] == 42.0);
  CHECK(parts[1].second == b);

  auto rebuilt = ParamVector::from_segments(parts);
  CHECK(rebuilt.values() == pv.values());

  CHECK_THROWS_AS(pv.segment("missing"), ContractError);
  CHECK_THROWS_AS(ParamVector::from_segments({{"x", a}, {"x", b}}), ContractError);
}

TEST_CASE("rng streams are reproducible and glorot draws are centered") {
  Rng r1(7), r2(7);
  for (int i = 0; i < 100; ++i) CHECK(r1.uniform() == r2.uniform());
  for (int i = 0; i < 100; ++i) CHECK(r1.normal() == r2.normal());

  // Empirical mean of 1e4 uniform(-limit, limit) draws stays within three
  // standard errors of zero.
  const double limit = std::sqrt(6.0 / 12.0);
  Rng r3(123);
  const int n = 10000;
  double mean = 0.0;
  for (int i = 0; i < n; ++i) mean += r3.uniform(-limit, limit);
  mean /= n;
  const double sigma_mean = limit / std::sqrt(3.0 * n);
  CHECK(std::abs(mean) < 3.0 * sigma_mean);
}

TEST_CASE("every differentiable primitive matches central differences") {
  const auto results = run_gradcheck(20260816, 100);
  CHECK(results.size() >= 20);
  for (const auto& r : results) {
    INFO("primitive ", r.primitive);
    CHECK(r.max_error < 1e-5);
  }
}

TEST_CASE("heaviside and relu gradient structure at the kink boundary") {
  Tape tape;
  const int x = tape.leaf(Tensor::vector(Vec::Constant(3, -1.5)));
  const int h = tape.heaviside(x);
  const int s = tape.sum(h);
  auto adj = tape.backward(s);
  CHECK(adj[x].size() == 0);  // piecewise-constant: nothing propagates

  Tape t2;
  const int y = t2.leaf(Tensor::vector((Vec(3) << -2.0, 0.5, 3.0).finished()));
  auto adj2 = t2.backward(t2.sum(t2.relu(y)));
  CHECK(adj2[y][0] == 0.0);
  CHECK(adj2[y][1] == 1.0);
  CHECK(adj2[y][2] == 1.0);
}

TEST_CASE("tape rejects malformed graphs with typed errors") {
  Tape tape;
  const int a = tape.leaf(Tensor::vector(Vec::Zero(3)));
  const int b = tape.leaf(Tensor::vector(Vec::Zero(4)));
  CHECK_THROWS_AS(tape.add(a, b), DimensionError);
  CHECK_THROWS_AS(tape.slice(a, 2, 5), DimensionError);
  CHECK_THROWS_AS(tape.matvec(a, b), ContractError);
  CHECK_THROWS_AS(tape.backward(a), ContractError);  // non-scalar output
  CHECK_THROWS_AS(tape.value(99), ContractError);
  CHECK_THROWS_AS(tape.pick(a, 7), DimensionError);
}

TEST_CASE("symbolic vjp values equal numeric backward") {
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    MlpSpec spec{{3, 5, 2}, Activation::kTanh, OutputActivation::kIdentity};
    Vec params = mlp_init(spec, rng);
    Vec input = rng.normal_vec(3);
    Vec seed = rng.normal_vec(2);

    Tape tape;
    const int p = tape.leaf(Tensor::vector(params));
    const int x = tape.leaf(Tensor::vector(input));
    const int out = mlp_forward(tape, spec, p, x);

    const auto adj = tape.backward_seeded(out, seed);

    const int sn = tape.constant(Tensor::vector(seed));
    const int gx = tape.append_vjp(out, sn, x);
    const int gp = tape.append_vjp(out, sn, p);

    CHECK((tape.value(gx).data() - adj[x]).lpNorm<Eigen::Infinity>() < 1e-12);
    CHECK((tape.value(gp).data() - adj[p]).lpNorm<Eigen::Infinity>() < 1e-12);
  }
}

TEST_CASE("gradients flow through appended vjp nodes") {
  // Scalar phi = c . d(seed . f(x))/dx must differentiate correctly w.r.t. x:
  // the finite-difference oracle rebuilds the whole graph, vjp included.
  Rng rng(4242);
  MlpSpec spec{{2, 4, 2}, Activation::kTanh, OutputActivation::kIdentity};
  const Vec params = mlp_init(spec, rng);
  const Vec seed = rng.normal_vec(2);
  const Vec c = rng.normal_vec(2);

  GradCase gc;
  gc.leaves = {Tensor::vector(rng.normal_vec(2))};
  gc.build = [&, params, seed, c](Tape& t, const std::vector<int>& l) {
    const int p = t.constant(Tensor::vector(params));
    const int out = mlp_forward(t, spec, p, l[0]);
    const int g = t.append_vjp(out, t.constant(Tensor::vector(seed)), l[0]);
    return t.dot(g, t.constant(Tensor::vector(c)));
  };
  CHECK(max_grad_error(gc) < 1e-5);
}

TEST_CASE("vjp of an unreachable node is a zero constant") {
  Tape tape;
  const int a = tape.leaf(Tensor::vector(Vec::Ones(2)));
  const int b = tape.leaf(Tensor::vector(Vec::Ones(2)));
  const int out = tape.scale(a, 2.0);
  const int g = tape.append_vjp(out, tape.constant(Tensor::vector(Vec::Ones(2))), b);
  CHECK(tape.value(g).data().norm() == 0.0);
}

TEST_CASE("mlp taped forward is bitwise equal to the plain forward") {
  Rng rng(5);
  for (auto output : {OutputActivation::kIdentity, OutputActivation::kSoftmax}) {
    for (auto act : {Activation::kTanh, Activation::kRelu, Activation::kIdentity}) {
      MlpSpec spec{{4, 7, 3}, act, output};
      const Vec params = mlp_init(spec, rng);
      const Vec input = rng.normal_vec(4);
      const Vec plain = mlp_forward(spec, params, input);

      Tape tape;
      const int out = mlp_forward(tape, spec, tape.leaf(Tensor::vector(params)),
                                  tape.leaf(Tensor::vector(input)));
      const Vec taped = tape.value(out).data();
      REQUIRE(plain.size() == taped.size());
      for (Index i = 0; i < plain.size(); ++i) {
        CHECK(std::memcmp(&plain[i], &taped[i], sizeof(double)) == 0);
      }
    }
  }
}

TEST_CASE("mlp identity layer adds its bias") {
  MlpSpec spec{{2, 2}, Activation::kTanh, OutputActivation::kIdentity};
  Vec params(6);
  params << 1, 0, 0, 1, 0.5, 0.5;  // W = I, b = (0.5, 0.5)
  const Vec y = mlp_forward(spec, params, Vec::Zero(2));
  CHECK(y[0] == 0.5);
  CHECK(y[1] == 0.5);
}

TEST_CASE("mlp rejects wrong input and param sizes") {
  MlpSpec spec{{3, 4, 2}, Activation::kTanh, OutputActivation::kIdentity};
  Rng rng(1);
  const Vec params = mlp_init(spec, rng);
  CHECK_THROWS_AS(mlp_forward(spec, params, Vec::Zero(5)), DimensionError);
  CHECK_THROWS_AS(mlp_forward(spec, Vec::Zero(3), Vec::Zero(3)), DimensionError);
  CHECK_THROWS_AS(MlpSpec{{3}}.validate(), ContractError);
}

TEST_CASE("glorot init layout: weights bounded, biases zero") {
  MlpSpec spec{{4, 8}, Activation::kTanh, OutputActivation::kIdentity};
  Rng rng(2026);
  const Vec params = mlp_init(spec, rng);
  REQUIRE(params.size() == 40);
  const double limit = std::sqrt(6.0 / 12.0);
  for (Index i = 0; i < 32; ++i) {
    CHECK(std::abs(params[i]) <= limit);
  }
  CHECK(params.tail(8).norm() == 0.0);
}

TEST_CASE("softmax head output sums to one") {
  MlpSpec spec{{3, 6, 4}, Activation::kTanh, OutputActivation::kSoftmax};
  Rng rng(9);
  const Vec params = mlp_init(spec, rng);
  for (int trial = 0; trial < 10; ++trial) {
    const Vec y = mlp_forward(spec, params, 10.0 * rng.normal_vec(3));
    CHECK(std::abs(y.sum() - 1.0) < 1e-12);
    CHECK(y.minCoeff() >= 0.0);
  }
}

TEST_CASE("forward-mode jacobian equals per-output backward rows") {
  Rng rng(31);
  for (auto output : {OutputActivation::kIdentity, OutputActivation::kSoftmax}) {
    MlpSpec spec{{3, 5, 5, 2}, Activation::kTanh, output};
    const Vec params = mlp_init(spec, rng);
    const Vec input = rng.normal_vec(3);
    const Mat jac = mlp_jacobian(spec, params, input);
    REQUIRE(jac.rows() == 2);
    REQUIRE(jac.cols() == 3);

    Tape tape;
    const int x = tape.leaf(Tensor::vector(input));
    const int out = mlp_forward(tape, spec, tape.constant(Tensor::vector(params)), x);
    for (Index row = 0; row < 2; ++row) {
      const auto adj = tape.backward_seeded(out, Vec::Unit(2, row));
      CHECK((adj[x].transpose() - jac.row(row)).lpNorm<Eigen::Infinity>() < 1e-12);
    }
  }
}

TEST_CASE("loss helpers differentiate and take documented values") {
  Tape tape;
  Vec pred(2), target(2);
  pred << 1.0, -1.0;
  target << 0.0, 1.0;
  const int p = tape.leaf(Tensor::vector(pred));
  const int loss = mse_loss(tape, p, target);
  CHECK(tape.value(loss).value() == doctest::Approx((1.0 + 4.0) / 2.0).epsilon(1e-15));

  Vec logits(3);
  logits << 0.2, -0.4, 1.1;
  const int lg = tape.leaf(Tensor::vector(logits));
  const int ce = cross_entropy_loss(tape, lg, 2);
  const double lse = std::log(std::exp(0.2) + std::exp(-0.4) + std::exp(1.1));
  CHECK(tape.value(ce).value() == doctest::Approx(lse - 1.1).epsilon(1e-12));

  Rng rng(77);
  GradCase gc;
  gc.leaves = {Tensor::vector(rng.normal_vec(3))};
  gc.build = [](Tape& t, const std::vector<int>& l) {
    return cross_entropy_loss(t, l[0], 1);
  };
  CHECK(max_grad_error(gc) < 1e-5);

  GradCase gm;
  gm.leaves = {Tensor::vector(rng.normal_vec(4))};
  gm.build = [](Tape& t, const std::vector<int>& l) {
    return mse_loss(t, l[0], Vec::Ones(4));
  };
  CHECK(max_grad_error(gm) < 1e-5);
}

TEST_CASE("adam first step moves by lr times the gradient sign") {
  auto pv = ParamVector::from_segments({{"theta1", Vec::Zero(3)}});
  auto grad = pv.zeros_like();
  grad.values() << 10.0, -0.5, 0.0;
  AdamState st = AdamState::init(3);
  AdamConfig cfg;
  cfg.lr = 0.1;
  adam_step(pv, grad, st, cfg);
  CHECK(pv.values()[0] == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(pv.values()[1] == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(pv.values()[2] == 0.0);
  CHECK(st.t == 1);
}

TEST_CASE("adam with zero learning rate leaves parameters untouched") {
  auto pv = ParamVector::from_segments({{"theta1", Vec::Ones(4)}});
  const Vec before = pv.values();
  auto grad = pv.zeros_like();
  grad.values().setConstant(3.0);
  AdamState st = AdamState::init(4);
  AdamConfig cfg;
  cfg.lr = 0.0;
  for (int i = 0; i < 5; ++i) adam_step(pv, grad, st, cfg);
  CHECK(pv.values() == before);
}

TEST_CASE("adam minimizes a quadratic") {
  auto pv = ParamVector::from_segments({{"theta1", Vec::Constant(2, 4.0)}});
  AdamState st = AdamState::init(2);
  AdamConfig cfg;
  cfg.lr = 0.05;
  for (int i = 0; i < 2000; ++i) {
    auto grad = pv.zeros_like();
    grad.values() = 2.0 * pv.values();
    adam_step(pv, grad, st, cfg);
  }
  CHECK(pv.values().norm() < 1e-3);
}

TEST_CASE("adam rejects poisoned gradients and names the segment") {
  auto pv = ParamVector::from_segments({{"theta1", Vec::Ones(2)}, {"theta2", Vec::Ones(2)}});
  auto grad = pv.zeros_like();
  grad.segment("theta2")[1] = std::nan("");
  AdamState st = AdamState::init(4);
  const Vec before = pv.values();
  try {
    adam_step(pv, grad, st, AdamConfig{});
    FAIL("expected PoisonedGradientError");
  } catch (const PoisonedGradientError& e) {
    CHECK(e.segment == "theta2");
  }
  CHECK(pv.values() == before);
  CHECK(st.t == 0);
}

TEST_CASE("checkpoint round-trip preserves exact bits and layout") {
  Rng rng(55);
  auto pv = ParamVector::from_segments({{"theta1", rng.normal_vec(7)},
                                        {"theta2", rng.normal_vec(3)},
                                        {"theta3", rng.normal_vec(5)}});
  const std::string path = temp_path("cnode_ckpt_test.bin");
  const std::uint64_t h = fnv1a("model description");
  save_checkpoint(path, pv, h);
  const ParamVector back = load_checkpoint(path, h);
  CHECK(back.size() == pv.size());
  CHECK(back.values() == pv.values());
  CHECK(back.segment_offset("theta3") == pv.segment_offset("theta3"));

  CHECK_THROWS_AS(load_checkpoint(path, h + 1), CheckpointError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path, h), CheckpointError);
}

TEST_CASE("checkpoint rejects corrupt files") {
  Rng rng(56);
  auto pv = ParamVector::from_segments({{"theta1", rng.normal_vec(4)}});
  const std::string path = temp_path("cnode_ckpt_corrupt.bin");
  const std::uint64_t h = fnv1a("m");
  save_checkpoint(path, pv, h);

  // Truncate.
  std::filesystem::resize_file(path, 10);
  CHECK_THROWS_AS(load_checkpoint(path, h), CheckpointError);

  // Bad magic.
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << "NOTAMODEL-------------------------";
  }
  CHECK_THROWS_AS(load_checkpoint(path, h), CheckpointError);
  std::filesystem::remove(path);
}

TEST_CASE("tape gauges return to baseline when tapes die") {
  const long tapes0 = Tape::live_tapes();
  const long nodes0 = Tape::live_nodes();
  {
    Tape tape;
    tape.leaf(Tensor::vector(Vec::Zero(10)));
    tape.constant(Tensor::scalar(1.0));
    CHECK(Tape::live_tapes() == tapes0 + 1);
    CHECK(Tape::live_nodes() == nodes0 + 2);
  }
  CHECK(Tape::live_tapes() == tapes0);
  CHECK(Tape::live_nodes() == nodes0);
}

}  // TEST_SUITE
