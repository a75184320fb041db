#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "cnode/checkpoint.hpp"
#include "cnode/model.hpp"
#include "cnode/train.hpp"

using namespace cnode;
using namespace cnode::model;
using diffcore::Activation;
using diffcore::MlpSpec;
using diffcore::OutputActivation;
using diffcore::ParamVector;
using diffcore::Rng;

namespace {

ParamVector field_only_params(const CharacteristicField& field, Vec theta2) {
  (void)field;
  return ParamVector::from_segments(
      {{"theta1", Vec(0)}, {"theta2", std::move(theta2)}, {"theta3", Vec(0)}});
}

CnodeModel crossing_model(solver::Method method) {
  CnodeModel m;
  m.field = make_crossing_field();
  m.solver.method = method;
  m.solver.h = 0.25;
  m.solver.rtol = 1e-10;
  m.solver.atol = 1e-12;
  return m;
}

double loss_under(const CnodeModel& model, const ParamVector& base,
                  const Vec& flat, const Example& ex) {
  ParamVector p = base;
  p.values() = flat;
  const Vec pred = predict(model, p, ex.z, ex.horizon);
  return (pred - ex.target).squaredNorm() / static_cast<double>(pred.size());
}

Vec fd_full_grad(const CnodeModel& model, const ParamVector& params,
                 const Example& ex, double h = 1e-5) {
  Vec g(params.size());
  for (Index i = 0; i < params.size(); ++i) {
    Vec plus = params.values();
    Vec minus = params.values();
    const double step = h * std::max(1.0, std::abs(plus[i]));
    plus[i] += step;
    minus[i] -= step;
    g[i] = (loss_under(model, params, plus, ex) -
            loss_under(model, params, minus, ex)) /
           (2.0 * step);
  }
  return g;
}

double max_scaled_diff(const Vec& a, const Vec& b) {
  double worst = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    worst = std::max(worst,
                     std::abs(a[i] - b[i]) / std::max(1.0, std::abs(b[i])));
  }
  return worst;
}

CnodeModel small_conditioned_model() {
  CnodeModel m;
  m.feature_net = MlpSpec{{2, 4, 1}, Activation::kTanh, OutputActivation::kIdentity};
  m.field = make_field(2, 1, 1, BalanceMode::kUOnly, {4}, {4});
  m.head_net = MlpSpec{{1, 4, 1}, Activation::kTanh, OutputActivation::kIdentity};
  m.solver.method = solver::Method::kEuler;
  m.solver.h = 0.1;
  return m;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("crossing field swaps its endpoints exactly") {
  for (auto method : {solver::Method::kEuler, solver::Method::kRk4,
                      solver::Method::kDopri5}) {
    CnodeModel m = crossing_model(method);
    auto params = field_only_params(m.field, crossing_theta2());
    const auto lo = evolve(m, params, Vec::Zero(1));
    const auto hi = evolve(m, params, Vec::Ones(1));
    CHECK(std::abs(lo.u_end[0] - 1.0) < 1e-12);
    CHECK(std::abs(hi.u_end[0] - 0.0) < 1e-12);
    // The curves genuinely cross in x-t space: both move one unit along the
    // first axis while the second coordinate rate is u0.
    CHECK(lo.x_end[0] == doctest::Approx(1.0));
    CHECK(lo.x_end[1] == doctest::Approx(0.0));
    CHECK(hi.x_end[1] == doctest::Approx(1.0));
  }
}

TEST_CASE("crossing field is exact under plain euler at any resolution") {
  CnodeModel m = crossing_model(solver::Method::kEuler);
  auto params = field_only_params(m.field, crossing_theta2());
  // Rates are constant along each curve, so euler has no truncation error;
  // dyadic steps make the sums exact in binary too.
  for (double h : {1.0, 0.5, 0.125}) {
    m.solver.h = h;
    CHECK(evolve(m, params, Vec::Zero(1)).u_end[0] == 1.0);
    CHECK(evolve(m, params, Vec::Ones(1)).u_end[0] == 0.0);
  }
  m.solver.h = 0.01;
  CHECK(std::abs(evolve(m, params, Vec::Ones(1)).u_end[0]) < 1e-13);
}

TEST_CASE("linear map field realizes u(1) = A u0 and inverts by reversal") {
  Rng rng(808);
  for (int trial = 0; trial < 10; ++trial) {
    Mat a(2, 2);
    a << rng.normal(), rng.normal(), rng.normal(), rng.normal();
    const CharacteristicField f = make_linear_map_field(2);
    const Vec theta2 = linear_map_theta2(a);

    const Vec u0 = rng.normal_vec(2);
    FieldDynamics dyn(f, theta2, u0);
    Vec y0 = Vec::Zero(f.k + f.n);
    y0.tail(2) = u0;

    solver::SolverConfig cfg;
    cfg.method = solver::Method::kRk4;
    cfg.h = 0.25;
    const auto fwd = solver::integrate({dyn.as_ode(), y0, 0.0, 1.0}, cfg);
    const Vec expected = a * u0;
    CHECK((fwd.y.tail(2) - expected).lpNorm<Eigen::Infinity>() < 1e-8);

    const auto back = solver::integrate({dyn.as_ode(), fwd.y, 1.0, 0.0}, cfg);
    CHECK((back.y.tail(2) - u0).lpNorm<Eigen::Infinity>() < 1e-8);
  }
}

TEST_CASE("unit direction reduces the model to a plain neural ode") {
  MlpSpec f{{2, 8, 2}, Activation::kTanh, OutputActivation::kIdentity};
  Rng rng(17);
  const Vec net_params = diffcore::mlp_init(f, rng);

  // Same net once as the jac of a unit-direction field over [x; u], once as
  // standalone dynamics over u alone.
  CharacteristicField field;
  field.k = 1;
  field.n = 2;
  field.balance = BalanceMode::kUOnly;
  field.unit_direction = true;
  field.jac_net = f;
  field.validate();

  FieldDynamics as_field(field, net_params, Vec(0));
  solver::MlpDynamics as_node(f, net_params);

  Rng rng2(18);
  const Vec u0 = rng2.normal_vec(2);
  Vec y0 = Vec::Zero(3);
  y0.tail(2) = u0;

  solver::SolverConfig cfg;
  cfg.method = solver::Method::kRk4;
  cfg.h = 0.05;
  const auto via_field = solver::integrate({as_field.as_ode(), y0, 0.0, 1.0}, cfg);
  const auto via_node = solver::integrate({as_node.as_ode(), u0, 0.0, 1.0}, cfg);
  CHECK((via_field.y.tail(2) - via_node.y).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("conditioning changes the spatial path") {
  Rng rng(33);
  CnodeModel m;
  m.field = make_field(2, 1, 1, BalanceMode::kUOnly, {8}, {8});
  m.solver.method = solver::Method::kRk4;
  m.solver.h = 0.1;
  auto params = field_only_params(m.field, Vec(rng.normal_vec(m.field.param_count())));

  const auto a = evolve(m, params, Vec::Constant(1, -1.0));
  const auto b = evolve(m, params, Vec::Constant(1, 1.5));
  CHECK((a.x_end - b.x_end).norm() > 1e-6);
}

TEST_CASE("init_params produces the documented segment layout") {
  CnodeModel m = small_conditioned_model();
  Rng rng(44);
  auto params = m.init_params(rng);
  CHECK(params.has("theta1"));
  CHECK(params.has("theta2"));
  CHECK(params.has("theta3"));
  CHECK(params.segment_size("theta1") == m.feature_net->param_count());
  CHECK(params.segment_size("theta2") == m.field.param_count());
  CHECK(params.segment_size("theta3") == m.head_net->param_count());
  CHECK(params.size() > 0);
}

TEST_CASE("describe pins the architecture and hash detects changes") {
  CnodeModel m = small_conditioned_model();
  const auto h1 = m.hash();
  CHECK(m.hash() == h1);
  CHECK(m.describe().find("balance = u_only") != std::string::npos);

  CnodeModel m2 = m;
  m2.field = make_field(2, 1, 1, BalanceMode::kUOnly, {5}, {4});
  CHECK(m2.hash() != h1);

  CnodeModel m3 = m;
  m3.solver.rtol = 1e-3;
  CHECK(m3.hash() != h1);
}

TEST_CASE("checkpoints refuse a different architecture") {
  CnodeModel m = small_conditioned_model();
  Rng rng(55);
  auto params = m.init_params(rng);
  const std::string path =
      (std::filesystem::temp_directory_path() / "model_ckpt.bin").string();
  diffcore::save_checkpoint(path, params, m.hash());
  const auto back = diffcore::load_checkpoint(path, m.hash());
  CHECK(back.values() == params.values());

  CnodeModel other = m;
  other.field = make_field(2, 1, 1, BalanceMode::kFull, {4}, {4});
  CHECK_THROWS_AS(diffcore::load_checkpoint(path, other.hash()),
                  diffcore::CheckpointError);
  std::filesystem::remove(path);
}

TEST_CASE("example gradient matches finite differences end to end") {
  CnodeModel m = small_conditioned_model();
  Rng rng(66);
  auto params = m.init_params(rng);

  Example ex;
  ex.z = rng.normal_vec(2);
  ex.target = Vec::Constant(1, 0.7);

  SUBCASE("discrete mode") {
    const auto eg = example_gradient(m, params, ex, Loss::kMse, GradMode::kDiscrete);
    const Vec fd = fd_full_grad(m, params, ex);
    CHECK(max_scaled_diff(eg.grad, fd) < 1e-6);
    CHECK(eg.nfe_forward > 0);
    CHECK(eg.nfe_gradient > 0);
  }

  SUBCASE("adjoint mode") {
    CnodeModel ma = m;
    ma.solver.method = solver::Method::kDopri5;
    ma.solver.rtol = 1e-9;
    ma.solver.atol = 1e-11;
    const auto eg = example_gradient(ma, params, ex, Loss::kMse, GradMode::kAdjoint);
    const Vec fd = fd_full_grad(ma, params, ex);
    CHECK(max_scaled_diff(eg.grad, fd) < 1e-4);
  }
}

TEST_CASE("classification gradient matches finite differences") {
  CnodeModel m;
  m.feature_net = MlpSpec{{2, 4, 2}, Activation::kTanh, OutputActivation::kIdentity};
  m.field = make_field(2, 2, 2, BalanceMode::kUOnly, {4}, {4});
  m.head_net = MlpSpec{{2, 4, 2}, Activation::kTanh, OutputActivation::kSoftmax};
  m.solver.method = solver::Method::kEuler;
  m.solver.h = 0.2;

  Rng rng(77);
  auto params = m.init_params(rng);
  Example ex;
  ex.z = rng.normal_vec(2);
  ex.label = 1;

  const auto eg = example_gradient(m, params, ex, Loss::kCrossEntropy,
                                   GradMode::kDiscrete);

  // Independent oracle: loss recomputed from pure forwards under perturbation.
  auto ce_at = [&](const Vec& flat) {
    ParamVector p = params;
    p.values() = flat;
    const Vec probs = predict(m, p, ex.z);
    return -std::log(probs[ex.label]);
  };
  double worst = 0.0;
  for (Index i = 0; i < params.size(); ++i) {
    Vec plus = params.values(), minus = params.values();
    const double step = 1e-5 * std::max(1.0, std::abs(plus[i]));
    plus[i] += step;
    minus[i] -= step;
    const double fd = (ce_at(plus) - ce_at(minus)) / (2.0 * step);
    worst = std::max(worst,
                     std::abs(eg.grad[i] - fd) / std::max(1.0, std::abs(fd)));
  }
  CHECK(worst < 1e-6);
  CHECK((eg.metric == 0.0 || eg.metric == 1.0));
}

TEST_CASE("zero learning rate leaves parameters and loss frozen") {
  CnodeModel m = small_conditioned_model();
  Rng rng(88);
  auto params = m.init_params(rng);
  const Vec before = params.values();

  Dataset data;
  for (int i = 0; i < 6; ++i) {
    Example ex;
    ex.z = rng.normal_vec(2);
    ex.target = Vec::Constant(1, 0.5);
    data.push_back(ex);
  }
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 3;
  cfg.adam.lr = 0.0;
  const auto res = train(m, params, data, cfg);
  CHECK(res.params.values() == before);
  REQUIRE(res.history.size() == 3);
  // Reshuffling regroups the per-batch sums, so epochs agree to roundoff.
  CHECK(res.history[1].loss == doctest::Approx(res.history[0].loss).epsilon(1e-14));
  CHECK(res.history[2].loss == doctest::Approx(res.history[0].loss).epsilon(1e-14));
  CHECK_FALSE(res.diverged);
}

TEST_CASE("training reduces loss on a small regression task") {
  CnodeModel m = small_conditioned_model();
  Rng rng(99);
  auto params = m.init_params(rng);

  Dataset data;
  for (int i = 0; i < 16; ++i) {
    Example ex;
    ex.z = rng.normal_vec(2);
    ex.target = Vec::Constant(1, 0.3 * ex.z[0] - 0.2 * ex.z[1]);
    data.push_back(ex);
  }
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.batch_size = 8;
  cfg.adam.lr = 0.02;
  cfg.seed = 5;
  const auto res = train(m, params, data, cfg);
  REQUIRE(res.history.size() == 40);
  CHECK(res.history.back().loss < 0.5 * res.history.front().loss);
  CHECK(res.history.back().nfe_forward > 0);
  CHECK(res.history.back().nfe_gradient > 0);
}

TEST_CASE("parallel batch evaluation reproduces the serial gradient path") {
  CnodeModel m = small_conditioned_model();
  Rng rng(111);
  auto params = m.init_params(rng);

  Dataset data;
  for (int i = 0; i < 12; ++i) {
    Example ex;
    ex.z = rng.normal_vec(2);
    ex.target = Vec::Constant(1, std::sin(double(i)));
    data.push_back(ex);
  }
  TrainConfig serial;
  serial.epochs = 4;
  serial.batch_size = 12;
  serial.adam.lr = 0.01;
  TrainConfig par = serial;
  par.parallel = 3;

  const auto a = train(m, params, data, serial);
  const auto b = train(m, params, data, par);
  // Same shard-ordered reduction, so histories agree to floating accumulation
  // order; with one batch per epoch the partial sums are merged identically.
  CHECK(a.history.back().loss == doctest::Approx(b.history.back().loss).epsilon(1e-12));
}

TEST_CASE("non-finite targets abort training with last good parameters") {
  CnodeModel m = small_conditioned_model();
  Rng rng(222);
  auto params = m.init_params(rng);
  const Vec init = params.values();

  Dataset data;
  Example ex;
  ex.z = rng.normal_vec(2);
  ex.target = Vec::Constant(1, std::nan(""));
  data.push_back(ex);

  TrainConfig cfg;
  cfg.epochs = 5;
  const auto res = train(m, params, data, cfg);
  CHECK(res.diverged);
  CHECK(res.params.values() == init);
  CHECK(res.history.empty());
}

TEST_CASE("model rejects inconsistent wiring") {
  CnodeModel m = small_conditioned_model();
  m.feature_net->layer_widths.back() = 3;  // feature output must match n
  CHECK_THROWS_AS(m.validate(), DimensionError);

  CnodeModel m2 = small_conditioned_model();
  m2.x0 = Vec::Zero(5);
  CHECK_THROWS_AS(m2.validate(), DimensionError);

  CnodeModel m3 = small_conditioned_model();
  Rng rng(1);
  auto params = m3.init_params(rng);
  CHECK_THROWS_AS(evolve(m3, params, Vec::Zero(7)), DimensionError);
}

}  // TEST_SUITE
