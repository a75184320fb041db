#include <doctest.h>

#include <cmath>

#include "cnode/flow.hpp"

using namespace cnode;
using namespace cnode::density;
using diffcore::Rng;

namespace {

constexpr double kLn2Pi = 1.8378770664093454836;

// du/ds = diag(-1,-2) u, realized as a unit-direction field with k = 2 whose
// Jacobian net is a single affine layer. The second column is zero, so the
// direction's second component contributes nothing.
Cnf diag_cnf() {
  Cnf cnf = make_cnf(2, 2, {}, {}, diffcore::Activation::kTanh, true);
  return cnf;
}

Vec diag_theta2() {
  Vec theta = Vec::Zero(12);
  theta[0] = -1.0;  // J(1,1) = -u1
  theta[5] = -2.0;  // J(2,1) = -2 u2
  return theta;
}

Vec glorot_theta2(const Cnf& cnf, std::uint64_t seed) {
  Rng rng(seed);
  Vec theta(cnf.field.param_count());
  if (!cnf.field.unit_direction) {
    theta.head(cnf.field.direction_param_count()) =
        diffcore::mlp_init(cnf.field.direction_net, rng);
  }
  theta.tail(cnf.field.jac_net.param_count()) =
      diffcore::mlp_init(cnf.field.jac_net, rng);
  return theta;
}

}  // namespace

TEST_SUITE("density") {

TEST_CASE("standard normal base density") {
  BaseDensity base{2};
  CHECK(base.log_prob(Vec::Zero(2)) == doctest::Approx(-kLn2Pi).epsilon(1e-14));
  CHECK(base.entropy() == doctest::Approx(1.0 + kLn2Pi).epsilon(1e-14));
  Vec u(2);
  u << 1.0, -2.0;
  CHECK(base.log_prob(u) == doctest::Approx(-kLn2Pi - 2.5).epsilon(1e-14));
  CHECK_THROWS_AS(base.log_prob(Vec::Zero(3)), DimensionError);
  CHECK(bits_per_dim(2.0, 2) == doctest::Approx(1.0 / std::log(2.0)));
}

TEST_CASE("estimator and flow configuration are validated") {
  TraceEstimator est;
  est.probes = 0;
  CHECK_THROWS_AS(est.validate(), ContractError);
  CHECK(parse_trace_mode("exact") == TraceMode::kExact);
  CHECK(parse_probe_dist("gaussian") == ProbeDist::kGaussian);
  CHECK_THROWS_AS(parse_trace_mode("approx"), ConfigError);

  Cnf bad = make_cnf(2, 2, {4}, {4});
  bad.field.direction_reads_x = true;
  bad.field.direction_net.layer_widths[0] = 4;
  CHECK_THROWS_AS(bad.validate(), ContractError);

  Cnf cond = make_cnf(2, 2, {4}, {4});
  cond.field.cond_dim = 1;
  cond.field.direction_net.layer_widths[0] = 3;
  CHECK_THROWS_AS(cond.validate(), ContractError);
}

TEST_CASE("zero field is the identity flow") {
  Cnf cnf = make_cnf(2, 1, {}, {4}, diffcore::Activation::kTanh, true);
  const Vec theta = Vec::Zero(cnf.field.param_count());

  const auto at_zero = log_prob(cnf, theta, Vec::Zero(2));
  CHECK(at_zero.log_prob == doctest::Approx(-kLn2Pi).epsilon(1e-12));
  CHECK(at_zero.delta0 == 0.0);
  CHECK(at_zero.stats.nfe > 0);

  Vec v(2);
  v << 0.3, -1.1;
  const auto lp = log_prob(cnf, theta, v);
  CHECK(lp.log_prob == doctest::Approx(cnf.base().log_prob(v)).epsilon(1e-12));
  CHECK(lp.u0 == v);
}

TEST_CASE("linear field accumulates minus the trace") {
  Cnf cnf = diag_cnf();
  const Vec theta = diag_theta2();

  // d(delta)/ds = -tr(diag(-1,-2)) = 3 at any state.
  FlowDynamics dyn(cnf.field, theta, cnf.estimator);
  Vec y(5);
  y << 0.4, -0.2, 0.0, 0.0, 0.0;
  const Vec dy = dyn.eval(0.0, y);
  CHECK(dy[0] == doctest::Approx(-0.4).epsilon(1e-14));
  CHECK(dy[1] == doctest::Approx(0.4).epsilon(1e-14));
  CHECK(dy[4] == doctest::Approx(3.0).epsilon(1e-14));

  const auto lp = log_prob(cnf, theta, Vec::Zero(2));
  CHECK(lp.log_prob == doctest::Approx(-kLn2Pi + 3.0).epsilon(1e-7));
  CHECK(std::abs(lp.log_prob - (-kLn2Pi + 3.0)) < 1e-5);
}

TEST_CASE("pushforward of a gaussian matches the closed-form covariance") {
  Cnf cnf = diag_cnf();
  cnf.solver.method = solver::Method::kRk4;
  cnf.solver.h = 0.1;
  const Vec theta = diag_theta2();

  const Index count = 100000;
  const Mat draws = sample(cnf, theta, count, 424242);
  REQUIRE(draws.rows() == count);

  const Vec mean = draws.colwise().mean();
  Vec var(2);
  for (int j = 0; j < 2; ++j) {
    var[j] = (draws.col(j).array() - mean[j]).square().sum() / (count - 1);
  }
  const double v1 = std::exp(-2.0);
  const double v2 = std::exp(-4.0);
  const double sigma1 = v1 * std::sqrt(2.0 / count);
  const double sigma2 = v2 * std::sqrt(2.0 / count);
  CHECK(std::abs(var[0] - v1) < 3.0 * sigma1);
  CHECK(std::abs(var[1] - v2) < 3.0 * sigma2);
  CHECK(std::abs(mean[0]) < 3.0 * std::sqrt(v1 / count));
  CHECK(std::abs(mean[1]) < 3.0 * std::sqrt(v2 / count));
}

TEST_CASE("zero field samples are exactly the base draws") {
  Cnf cnf = make_cnf(2, 1, {}, {4}, diffcore::Activation::kTanh, true);
  const Vec theta = Vec::Zero(cnf.field.param_count());
  const Mat s = sample(cnf, theta, 5, 99);

  Rng rng(99);
  for (Index i = 0; i < 5; ++i) {
    const Vec expected = rng.normal_vec(2);
    CHECK(s.row(i).transpose() == expected);
  }
}

TEST_CASE("sampling is deterministic in the seed") {
  Cnf cnf = make_cnf(2, 2, {6}, {6});
  const Vec theta = glorot_theta2(cnf, 7);
  const Mat a = sample(cnf, theta, 8, 123);
  const Mat b = sample(cnf, theta, 8, 123);
  const Mat c = sample(cnf, theta, 8, 124);
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("hutchinson matrix estimate obeys monte carlo rates") {
  Rng rng(2026);
  Mat a = Mat::Identity(8, 8) * 2.0;
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 8; ++j) a(i, j) += 0.3 * rng.normal();
  }
  const double tr = a.trace();

  auto estimate = [&](Index probes, std::uint64_t seed) {
    Rng prng(seed);
    double acc = 0.0;
    for (Index p = 0; p < probes; ++p) {
      const Vec eps = prng.rademacher_vec(8);
      acc += eps.dot(a * eps);
    }
    return acc / static_cast<double>(probes);
  };
  CHECK(std::abs(estimate(10000, 1) - tr) < 0.01 * std::abs(tr));
  CHECK(std::abs(estimate(100, 2) - tr) < 0.10 * std::abs(tr));
}

TEST_CASE("hutchinson flow trace agrees with the exact mode") {
  // Affine 3-D dynamics with a dominant diagonal, so the relative tolerance
  // is meaningful: du/ds = W u + b with W = 2 I + 0.2 N.
  Cnf cnf = make_cnf(3, 1, {}, {}, diffcore::Activation::kTanh, true);
  Rng rng(31);
  Vec theta(cnf.field.param_count());
  Eigen::Map<RowMat> w(theta.data(), 3, 3);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      w(i, j) = (i == j ? 2.0 : 0.0) + 0.2 * rng.normal();
    }
  }
  theta.tail(3).setZero();

  Vec y = Vec::Zero(5);
  y.head(3) << 0.3, -0.8, 0.5;

  FlowDynamics exact(cnf.field, theta, cnf.estimator);
  const double exact_rate = exact.eval(0.0, y)[4];
  REQUIRE(std::abs(exact_rate) > 3.0);

  TraceEstimator hutch;
  hutch.mode = TraceMode::kHutchinson;
  hutch.probes = 10000;
  hutch.seed = 5;
  FlowDynamics approx(cnf.field, theta, hutch);
  CHECK(std::abs(approx.eval(0.0, y)[4] - exact_rate) <
        0.01 * std::abs(exact_rate));

  TraceEstimator gauss = hutch;
  gauss.probes = 2000;
  gauss.dist = ProbeDist::kGaussian;
  FlowDynamics gapprox(cnf.field, theta, gauss);
  CHECK(std::abs(gapprox.eval(0.0, y)[4] - exact_rate) <
        0.10 * std::abs(exact_rate));
}

TEST_CASE("exact trace equals the finite-difference jacobian trace") {
  Cnf cnf = make_cnf(2, 2, {8}, {8});
  const Vec theta = glorot_theta2(cnf, 11);
  FlowDynamics dyn(cnf.field, theta, cnf.estimator);

  Vec y = Vec::Zero(5);
  y.head(2) << 0.7, -0.4;
  const double rate = dyn.eval(0.0, y)[4];

  auto du_at = [&](const Vec& u) {
    return model::field_rates(cnf.field, theta, Vec::Zero(2), u, Vec(0)).du;
  };
  const double h = 1e-6;
  double fd_trace = 0.0;
  for (int i = 0; i < 2; ++i) {
    Vec up = y.head(2), dn = y.head(2);
    up[i] += h;
    dn[i] -= h;
    fd_trace += (du_at(up)[i] - du_at(dn)[i]) / (2.0 * h);
  }
  CHECK(std::abs(-fd_trace - rate) < 1e-4);
}

TEST_CASE("unit direction with k=1 is a plain neural-ode flow") {
  Cnf cnf = make_cnf(2, 1, {}, {8}, diffcore::Activation::kTanh, true);
  const Vec theta = glorot_theta2(cnf, 13);
  FlowDynamics dyn(cnf.field, theta, cnf.estimator);

  Vec y = Vec::Zero(4);
  y.head(2) << -0.5, 0.9;
  const Vec dy = dyn.eval(0.0, y);
  const Vec direct = diffcore::mlp_forward(cnf.field.jac_net, theta, y.head(2));
  CHECK(dy.head(2) == direct);
  CHECK(dy[2] == 1.0);
}

TEST_CASE("forward then backward integration recovers the input") {
  Cnf cnf = make_cnf(2, 2, {8}, {8});
  cnf.solver.rtol = 1e-10;
  cnf.solver.atol = 1e-12;
  const Vec theta = glorot_theta2(cnf, 17);

  Rng rng(18);
  for (int trial = 0; trial < 5; ++trial) {
    const Vec w = rng.normal_vec(2);
    const auto fwd = push_forward(cnf, theta, w);
    const auto lp = log_prob(cnf, theta, fwd.v);
    CHECK((lp.u0 - w).lpNorm<Eigen::Infinity>() < 1e-6);
    // Change-of-variables self-consistency: both directions measure the same
    // trace integral.
    CHECK(lp.log_prob ==
          doctest::Approx(cnf.base().log_prob(w) + fwd.delta1).epsilon(1e-7));
  }
}

TEST_CASE("nll gradient matches finite differences through the solver") {
  Cnf cnf = make_cnf(2, 2, {6}, {6});
  cnf.solver.rtol = 1e-9;
  cnf.solver.atol = 1e-11;
  const Vec theta = glorot_theta2(cnf, 23);
  Vec v(2);
  v << 1.2, -0.3;

  const auto g = nll_gradient(cnf, theta, v, cnf.estimator);
  CHECK(g.nll == doctest::Approx(-log_prob(cnf, theta, v).log_prob).epsilon(1e-10));
  CHECK(g.nfe_forward > 0);
  CHECK(g.nfe_adjoint > 0);

  double worst = 0.0;
  for (Index i = 0; i < theta.size(); ++i) {
    Vec plus = theta, minus = theta;
    const double step = 1e-5 * std::max(1.0, std::abs(theta[i]));
    plus[i] += step;
    minus[i] -= step;
    const double fd = (-log_prob(cnf, plus, v).log_prob +
                       log_prob(cnf, minus, v).log_prob) /
                      (2.0 * step);
    worst = std::max(worst,
                     std::abs(g.grad[i] - fd) / std::max(1.0, std::abs(fd)));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("zero epochs leave the parameters untouched") {
  Cnf cnf = make_cnf(2, 2, {4}, {4});
  const Vec theta = glorot_theta2(cnf, 29);
  CnfTrainConfig cfg;
  cfg.epochs = 0;
  const auto res = train_cnf(cnf, theta, {Vec::Zero(2)}, cfg);
  CHECK(res.theta2 == theta);
  CHECK(res.history.empty());
  CHECK_FALSE(res.diverged);
}

TEST_CASE("training on base samples calibrates to the base entropy") {
  Cnf cnf = make_cnf(2, 2, {8}, {8});
  const Vec theta = glorot_theta2(cnf, 37);

  Rng rng(38);
  std::vector<Vec> data;
  for (int i = 0; i < 512; ++i) data.push_back(rng.normal_vec(2));

  CnfTrainConfig cfg;
  cfg.epochs = 12;
  cfg.batch_size = 64;
  cfg.adam.lr = 3e-3;
  cfg.seed = 39;
  cfg.parallel = 4;
  const auto res = train_cnf(cnf, theta, data, cfg);
  REQUIRE_FALSE(res.diverged);
  REQUIRE(res.history.size() == 12);
  CHECK(std::abs(res.history.back().nll - cnf.base().entropy()) < 0.1);
  CHECK(res.history.back().nfe_forward > 0);
  CHECK(res.history.back().nfe_adjoint > 0);
}

TEST_CASE("hutchinson training runs and stays finite") {
  Cnf cnf = make_cnf(2, 2, {6}, {6});
  cnf.estimator.mode = TraceMode::kHutchinson;
  cnf.estimator.probes = 1;
  cnf.estimator.seed = 41;
  const Vec theta = glorot_theta2(cnf, 43);

  Rng rng(44);
  std::vector<Vec> data;
  for (int i = 0; i < 32; ++i) data.push_back(rng.normal_vec(2));

  CnfTrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.adam.lr = 1e-3;
  const auto res = train_cnf(cnf, theta, data, cfg);
  REQUIRE_FALSE(res.diverged);
  for (const auto& rec : res.history) CHECK(std::isfinite(rec.nll));
}

TEST_CASE("one-dimensional flow density integrates to one") {
  Cnf cnf = make_cnf(1, 1, {4}, {4});
  const Vec theta0 = glorot_theta2(cnf, 47);

  Rng rng(48);
  std::vector<Vec> data;
  for (int i = 0; i < 200; ++i) {
    data.push_back(Vec::Constant(1, 1.5 + 0.5 * rng.normal()));
  }
  CnfTrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 50;
  cfg.adam.lr = 5e-3;
  const auto res = train_cnf(cnf, theta0, data, cfg);
  REQUIRE_FALSE(res.diverged);

  const int grid = 401;
  const double lo = -10.0, hi = 10.0;
  const double h = (hi - lo) / (grid - 1);
  double integral = 0.0;
  for (int i = 0; i < grid; ++i) {
    const double v = lo + h * i;
    const double p = std::exp(log_prob(cnf, res.theta2, Vec::Constant(1, v)).log_prob);
    integral += (i == 0 || i == grid - 1) ? 0.5 * p : p;
  }
  integral *= h;
  CHECK(integral > 0.99);
  CHECK(integral < 1.01);
}

}  // TEST_SUITE
