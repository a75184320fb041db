#include "cnode/cli/run.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cnode/checkpoint.hpp"
#include "cnode/cli/config.hpp"
#include "cnode/flow.hpp"
#include "cnode/gradcheck.hpp"
#include "cnode/tasks/burgers.hpp"
#include "cnode/tasks/pde.hpp"
#include "cnode/tasks/timeseries.hpp"
#include "cnode/tasks/toy.hpp"
#include "cnode/train.hpp"

namespace fs = std::filesystem;

namespace cnode::cli {

namespace {

using nlohmann::json;

constexpr const char* kVersion = "0.1.0";
constexpr double kGradcheckTol = 1e-5;

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string iso_utc_now() {
  const std::time_t t =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class Csv {
 public:
  Csv(const fs::path& path, std::initializer_list<std::string> cols) {
    out_.open(path);
    if (!out_) throw Error("cannot open '" + path.string() + "' for writing");
    bool first = true;
    for (const auto& c : cols) {
      if (!first) out_ << ',';
      out_ << c;
      first = false;
    }
    out_ << '\n';
  }

  void row(std::initializer_list<double> vals) {
    bool first = true;
    for (double v : vals) {
      if (!first) out_ << ',';
      out_ << fmt17(v);
      first = false;
    }
    out_ << '\n';
  }

  void row(const std::string& label, std::initializer_list<double> vals) {
    out_ << label;
    for (double v : vals) out_ << ',' << fmt17(v);
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

solver::SolverConfig make_solver(const RunConfig& cfg) {
  solver::SolverConfig s;
  s.method = solver::parse_method(cfg.method);
  s.h = cfg.h;
  s.rtol = cfg.rtol;
  s.atol = cfg.atol;
  s.max_steps = cfg.max_steps;
  return s;
}

model::TrainConfig make_train(const RunConfig& cfg, model::Loss loss) {
  model::TrainConfig t;
  t.epochs = cfg.epochs;
  t.batch_size = cfg.batch_size;
  t.loss = loss;
  t.grad_mode = model::parse_grad_mode(cfg.grad_mode);
  t.adam.lr = cfg.lr;
  t.seed = cfg.seed;
  t.parallel = cfg.parallel;
  return t;
}

void write_train_history(const fs::path& dir,
                         const std::vector<model::EpochRecord>& history,
                         json& stats) {
  Csv csv(dir / "metrics.csv",
          {"epoch", "loss", "metric", "nfe_forward", "nfe_gradient"});
  for (const auto& e : history) {
    csv.row({static_cast<double>(e.epoch), e.loss, e.metric, e.nfe_forward,
             e.nfe_gradient});
  }
  if (!history.empty()) {
    stats["epochs"] = history.size();
    stats["nfe_forward_per_example"] = history.back().nfe_forward;
    stats["nfe_gradient_per_example"] = history.back().nfe_gradient;
  }
}

int do_solve(const RunConfig& cfg, const fs::path& dir, json& metrics,
             json& stats, json& files) {
  Vec y0;
  std::function<Vec(double, const Vec&)> rates;
  if (cfg.dynamics == "decay") {
    y0 = Vec::Ones(1);
    rates = [](double, const Vec& y) { return Vec(-y); };
  } else if (cfg.dynamics == "linear2") {
    y0 = Vec::Ones(2);
    rates = [](double, const Vec& y) {
      Vec dy(2);
      dy << -y[0], -2.0 * y[1];
      return dy;
    };
  } else {
    throw ConfigError("unknown dynamics '" + cfg.dynamics +
                      "' (one of: decay, linear2)");
  }

  const auto sol = solver::integrate({rates, y0, 0.0, cfg.t_end},
                                     make_solver(cfg));
  for (Index i = 0; i < sol.y.size(); ++i) {
    if (i) std::cout << ' ';
    std::printf("%.9g", sol.y[i]);
  }
  std::cout << '\n';

  Csv csv(dir / "metrics.csv", {"t", "component", "value"});
  for (Index i = 0; i < sol.y.size(); ++i) {
    csv.row({cfg.t_end, static_cast<double>(i), sol.y[i]});
  }
  files["metrics"] = "metrics.csv";
  metrics["t"] = cfg.t_end;
  metrics["y"] = std::vector<double>(sol.y.begin(), sol.y.end());
  stats["nfe"] = sol.stats.nfe;
  stats["steps_accepted"] = sol.stats.steps_accepted;
  stats["steps_rejected"] = sol.stats.steps_rejected;
  return 0;
}

int do_gradcheck(const RunConfig& cfg, const fs::path& dir, json& metrics,
                 json& stats, json& files) {
  const auto rows = diffcore::run_gradcheck(cfg.seed, 16);
  Csv csv(dir / "metrics.csv", {"primitive", "instances", "max_rel_error"});
  double worst = 0.0;
  std::printf("%-16s %10s %14s\n", "primitive", "instances", "max_rel_error");
  for (const auto& r : rows) {
    csv.row(r.primitive,
            {static_cast<double>(r.instances), r.max_error});
    std::printf("%-16s %10d %14.3e\n", r.primitive.c_str(), r.instances,
                r.max_error);
    worst = std::max(worst, r.max_error);
  }
  const bool pass = worst < kGradcheckTol;
  std::printf("worst %.3e (tolerance %.0e): %s\n", worst, kGradcheckTol,
              pass ? "ok" : "FAIL");
  files["metrics"] = "metrics.csv";
  metrics["max_error"] = worst;
  metrics["tolerance"] = kGradcheckTol;
  metrics["pass"] = pass;
  stats["primitives"] = rows.size();
  return pass ? 0 : 2;
}

int do_demo_burgers(const RunConfig& cfg, const fs::path& dir, json& metrics,
                    json& stats, json& files) {
  tasks::BurgersDemo demo;
  demo.f = [](double x) { return 1.0 - x; };
  demo.x0 = {0.0, 0.25, 0.5, 0.75, 1.0};
  demo.horizon = 1.0;

  const auto curves = tasks::burgers_characteristics(demo, 41);
  Csv traj(dir / "characteristics.csv", {"curve", "x0", "u", "s", "x"});
  for (std::size_t ci = 0; ci < curves.size(); ++ci) {
    const auto& c = curves[ci];
    for (std::size_t j = 0; j < c.s.size(); ++j) {
      traj.row({static_cast<double>(ci), c.x0, c.u, c.s[j], c.x[j]});
    }
  }

  double moc_err = 0.0;
  const auto scfg = make_solver(cfg);
  for (const auto& c : curves) {
    const Vec end = tasks::moc_endpoint(c.x0, c.u, demo.horizon, scfg);
    moc_err = std::max(moc_err, std::abs(end[0] - (c.u * demo.horizon + c.x0)));
  }
  const auto crossing = tasks::first_crossing(demo);

  Csv csv(dir / "metrics.csv", {"crossing_s", "moc_max_error", "curves"});
  csv.row({crossing.value_or(-1.0), moc_err,
           static_cast<double>(curves.size())});
  files["metrics"] = "metrics.csv";
  files["characteristics"] = "characteristics.csv";
  metrics["crossing_s"] = crossing ? json(*crossing) : json();
  metrics["moc_max_error"] = moc_err;
  stats["curves"] = curves.size();
  std::printf("%zu characteristics of the 1-x ramp; first crossing at s=%s\n",
              curves.size(),
              crossing ? fmt17(*crossing).c_str() : "none");
  return 0;
}

int do_demo_intersect(const RunConfig& cfg, const fs::path& dir, json& metrics,
                      json& stats, json& files) {
  model::CnodeModel m;
  m.field = model::make_crossing_field();
  m.solver = make_solver(cfg);
  const auto params = diffcore::ParamVector::from_segments(
      {{"theta1", Vec(0)},
       {"theta2", model::crossing_theta2()},
       {"theta3", Vec(0)}});

  Csv traj(dir / "trajectories.csv", {"u0", "s", "x", "u"});
  long nfe = 0;
  double u_end[2] = {0.0, 0.0};
  for (int start = 0; start <= 1; ++start) {
    const Vec z = Vec::Constant(1, static_cast<double>(start));
    for (int j = 0; j <= 100; ++j) {
      const double s = 0.01 * j;
      const auto ev = model::evolve(m, params, z, s);
      traj.row({static_cast<double>(start), s, ev.x_end[0], ev.u_end[0]});
      nfe += ev.stats.nfe;
      if (j == 100) u_end[start] = ev.u_end[0];
    }
  }

  Csv csv(dir / "metrics.csv", {"u_end_from_0", "u_end_from_1"});
  csv.row({u_end[0], u_end[1]});
  files["metrics"] = "metrics.csv";
  files["trajectories"] = "trajectories.csv";
  metrics["u_end_from_0"] = u_end[0];
  metrics["u_end_from_1"] = u_end[1];
  stats["nfe"] = nfe;
  std::printf("u0=0 -> u(1)=%.12g, u0=1 -> u(1)=%.12g\n", u_end[0], u_end[1]);
  return 0;
}

int do_pde_fit(const RunConfig& cfg, const fs::path& dir, json& metrics,
               json& stats, json& files) {
  const auto data = tasks::gen_pde_dataset(cfg.n_train, cfg.n_test, cfg.seed);
  tasks::PdeFitConfig pc;
  pc.epochs = cfg.epochs;
  pc.batch_size = cfg.batch_size;
  pc.adam.lr = cfg.lr;
  pc.init_seed = cfg.seed;
  pc.shuffle_seed = cfg.seed + 1;
  pc.quad_steps = cfg.quad_steps;
  pc.parallel = cfg.parallel;

  tasks::PdeFitResult fit;
  std::string arch;
  if (cfg.variant == "cnode") {
    fit = tasks::pde_fit(data, tasks::default_pde_nets(), pc);
    arch = "pde-fit cnode 2,12,12,1|2,12,12,1|1,12,12,2|1,12,12,1";
  } else {
    fit = tasks::node_pde_baseline(data, tasks::default_node_pde_net(), pc);
    arch = "pde-fit node 2,32,32,1";
  }

  Csv csv(dir / "metrics.csv", {"epoch", "loss", "flagged", "max_fp_iters"});
  for (const auto& e : fit.history) {
    csv.row({static_cast<double>(e.epoch), e.loss,
             static_cast<double>(e.flagged),
             static_cast<double>(e.max_fp_iters)});
  }
  diffcore::save_checkpoint((dir / "checkpoint.bin").string(), fit.params,
                            diffcore::fnv1a(arch));
  std::ofstream(dir / "train.csv") << tasks::pde_csv(data.train);
  std::ofstream(dir / "test.csv") << tasks::pde_csv(data.test);
  files["metrics"] = "metrics.csv";
  files["checkpoint"] = "checkpoint.bin";
  files["train_data"] = "train.csv";
  files["test_data"] = "test.csv";
  metrics["variant"] = cfg.variant;
  metrics["param_count"] = fit.params.size();
  metrics["train_deviation_pct"] = fit.train_deviation_pct;
  metrics["test_deviation_pct"] = fit.test_deviation_pct;
  metrics["diverged"] = fit.diverged;
  stats["max_fp_iters"] = fit.max_fp_iters;
  stats["epochs"] = fit.history.size();
  std::printf("%s: test deviation %.2f%% (train %.2f%%)\n", cfg.variant.c_str(),
              fit.test_deviation_pct, fit.train_deviation_pct);
  return fit.diverged ? 2 : 0;
}

int do_timeseries(const RunConfig& cfg, const fs::path& dir, json& metrics,
                  json& stats, json& files) {
  const auto data = tasks::gen_ts_dataset(cfg.n_train, cfg.per_window,
                                          cfg.sigma, cfg.seed, cfg.x_lo,
                                          cfg.x_hi);
  const auto kind =
      cfg.variant == "cnode" ? tasks::TsKind::kCnode : tasks::TsKind::kNode;
  const auto res =
      tasks::timeseries_eval(kind, data, make_train(cfg, model::Loss::kMse));

  write_train_history(dir, res.history, stats);
  Csv win(dir / "windows.csv", {"window_lo", "window_hi", "deviation_pct"});
  for (int w = 0; w < 6; ++w) {
    win.row({static_cast<double>(w), static_cast<double>(w + 1),
             res.deviation_pct[static_cast<std::size_t>(w)]});
  }
  const auto m = tasks::make_ts_model(kind);
  diffcore::save_checkpoint((dir / "checkpoint.bin").string(), res.params,
                            m.hash());
  files["metrics"] = "metrics.csv";
  files["windows"] = "windows.csv";
  files["checkpoint"] = "checkpoint.bin";
  metrics["variant"] = cfg.variant;
  metrics["train_mse"] = res.train_mse;
  metrics["deviation_pct"] = res.deviation_pct;
  metrics["diverged"] = res.diverged;
  std::printf("%s: train mse %.4g, window deviations", cfg.variant.c_str(),
              res.train_mse);
  for (double d : res.deviation_pct) std::printf(" %.1f%%", d);
  std::printf("\n");
  return res.diverged ? 2 : 0;
}

int do_toy_classify(const RunConfig& cfg, const fs::path& dir, json& metrics,
                    json& stats, json& files) {
  if (cfg.toy != "annuli") {
    throw ConfigError("toy-classify works on the annuli dataset (task.toy)");
  }
  if (cfg.grad_mode == "discrete" && cfg.method == "dopri5") {
    throw ConfigError(
        "discrete gradients need a fixed-step solver; pick --solver euler or "
        "rk4, or --grad-mode adjoint");
  }
  const auto train_data = tasks::gen_toy2d(tasks::ToyKind::kAnnuli,
                                           cfg.n_train, cfg.seed);
  const auto test_data = tasks::gen_toy2d(tasks::ToyKind::kAnnuli, cfg.n_test,
                                          cfg.seed + 1);
  auto to_examples = [](const tasks::Toy2d& d) {
    model::Dataset out;
    for (Index i = 0; i < d.inputs.rows(); ++i) {
      model::Example ex;
      ex.z = d.inputs.row(i).transpose();
      ex.label = d.labels[static_cast<std::size_t>(i)];
      out.push_back(ex);
    }
    return out;
  };

  model::CnodeModel m;
  m.feature_net = diffcore::MlpSpec{{2, 16, 2}};
  m.field = model::make_field(cfg.k, 2, 2, model::BalanceMode::kUOnly, {16},
                              {16});
  m.head_net = diffcore::MlpSpec{{2, 16, 2}};
  m.solver = make_solver(cfg);

  diffcore::Rng rng(cfg.seed);
  const auto trained =
      model::train(m, m.init_params(rng), to_examples(train_data),
                   make_train(cfg, model::Loss::kCrossEntropy));

  write_train_history(dir, trained.history, stats);
  diffcore::save_checkpoint((dir / "checkpoint.bin").string(), trained.params,
                            m.hash());
  std::ofstream(dir / "train.csv") << tasks::toy_csv(train_data);
  const double train_acc =
      model::evaluate_accuracy(m, trained.params, to_examples(train_data));
  const double test_acc =
      model::evaluate_accuracy(m, trained.params, to_examples(test_data));
  files["metrics"] = "metrics.csv";
  files["checkpoint"] = "checkpoint.bin";
  files["train_data"] = "train.csv";
  metrics["train_accuracy"] = train_acc;
  metrics["test_accuracy"] = test_acc;
  metrics["diverged"] = trained.diverged;
  std::printf("annuli: train accuracy %.3f, test accuracy %.3f\n", train_acc,
              test_acc);
  return trained.diverged ? 2 : 0;
}

int do_cnf2d(const RunConfig& cfg, const fs::path& dir, json& metrics,
             json& stats, json& files) {
  const auto train_data = tasks::gen_toy2d(tasks::ToyKind::kGaussianMixture,
                                           cfg.n_train, cfg.seed);
  const auto test_data = tasks::gen_toy2d(tasks::ToyKind::kGaussianMixture,
                                          cfg.n_test, cfg.seed + 1);

  density::Cnf cnf = density::make_cnf(2, cfg.k, {16}, {16});
  cnf.solver = make_solver(cfg);
  cnf.estimator.mode = density::parse_trace_mode(cfg.trace);
  cnf.estimator.probes = cfg.probes;
  cnf.estimator.seed = cfg.seed;

  density::CnfTrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.adam.lr = cfg.lr;
  tc.seed = cfg.seed;
  tc.parallel = cfg.parallel;

  diffcore::Rng rng(cfg.seed);
  const Vec theta0 = density::init_theta2(cnf, rng);
  const auto res = density::train_cnf(cnf, theta0, tasks::toy_rows(train_data),
                                      tc);

  Csv csv(dir / "metrics.csv", {"epoch", "nll", "nfe_forward", "nfe_adjoint"});
  for (const auto& e : res.history) {
    csv.row({static_cast<double>(e.epoch), e.nll, e.nfe_forward,
             e.nfe_adjoint});
  }
  std::ofstream(dir / "train.csv") << tasks::toy_csv(train_data);
  files["metrics"] = "metrics.csv";
  files["train_data"] = "train.csv";

  diffcore::ParamVector packed =
      diffcore::ParamVector::from_segments({{"theta2", res.theta2}});
  diffcore::save_checkpoint(
      (dir / "checkpoint.bin").string(), packed,
      diffcore::fnv1a("cnf2d k=" + std::to_string(cfg.k) + " hidden=16"));
  files["checkpoint"] = "checkpoint.bin";

  // Score against the moment-matched Gaussian fit on the training split.
  density::Cnf eval_cnf = cnf;
  eval_cnf.estimator = density::TraceEstimator{};
  const double test_nll =
      density::evaluate_nll(eval_cnf, res.theta2, tasks::toy_rows(test_data));
  const Mat& xs = train_data.inputs;
  const Vec mu = xs.colwise().mean().transpose();
  const Mat centered = xs.rowwise() - mu.transpose();
  const Mat sigma =
      centered.transpose() * centered / static_cast<double>(xs.rows());
  const Mat sigma_inv = sigma.inverse();
  double gauss_nll = 0.0;
  for (Index i = 0; i < test_data.inputs.rows(); ++i) {
    const Vec d = test_data.inputs.row(i).transpose() - mu;
    gauss_nll += 0.5 * (d.dot(sigma_inv * d)) +
                 0.5 * std::log(sigma.determinant()) +
                 std::log(2.0 * M_PI);
  }
  gauss_nll /= static_cast<double>(test_data.inputs.rows());

  metrics["train_nll"] = res.history.empty() ? 0.0 : res.history.back().nll;
  metrics["test_nll"] = test_nll;
  metrics["gaussian_ref_nll"] = gauss_nll;
  metrics["bits_per_dim"] = density::bits_per_dim(test_nll, 2);
  metrics["beats_gaussian"] = test_nll < gauss_nll;
  metrics["diverged"] = res.diverged;
  if (!res.history.empty()) {
    stats["epochs"] = res.history.size();
    stats["nfe_forward_per_example"] = res.history.back().nfe_forward;
    stats["nfe_adjoint_per_example"] = res.history.back().nfe_adjoint;
  }
  std::printf("cnf2d: test nll %.4f vs gaussian %.4f (%s)\n", test_nll,
              gauss_nll, test_nll < gauss_nll ? "better" : "worse");
  return res.diverged ? 2 : 0;
}

fs::path make_run_dir(const RunConfig& cfg) {
  const fs::path root(cfg.out);
  const std::string id = cfg.subcommand + "-s" + std::to_string(cfg.seed);
  fs::path dir = root / id;
  for (int suffix = 2; fs::exists(dir); ++suffix) {
    dir = root / (id + "-" + std::to_string(suffix));
  }
  fs::create_directories(dir);
  return dir;
}

void write_manifest(const fs::path& dir, const json& manifest) {
  const fs::path tmp = dir / "manifest.json.tmp";
  {
    std::ofstream out(tmp);
    out << manifest.dump(2) << '\n';
  }
  fs::rename(tmp, dir / "manifest.json");
}

int run_configured(const RunConfig& cfg) {
  const fs::path dir = make_run_dir(cfg);
  json manifest;
  manifest["subcommand"] = cfg.subcommand;
  manifest["run_id"] = dir.filename().string();
  manifest["seed"] = cfg.seed;
  manifest["parallel"] = cfg.parallel;
  manifest["started_at"] = iso_utc_now();
  manifest["versions"] = {
      {"artifact", kVersion},
      {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                    std::to_string(EIGEN_MAJOR_VERSION) + "." +
                    std::to_string(EIGEN_MINOR_VERSION)},
      {"cli11", CLI11_VERSION}};
  manifest["config"] = serialize_config(cfg);

  json metrics = json::object();
  json stats = json::object();
  json files = json::object();
  int code = 0;
  std::string error;
  try {
    if (cfg.subcommand == "solve") {
      code = do_solve(cfg, dir, metrics, stats, files);
    } else if (cfg.subcommand == "gradcheck") {
      code = do_gradcheck(cfg, dir, metrics, stats, files);
    } else if (cfg.subcommand == "demo-burgers") {
      code = do_demo_burgers(cfg, dir, metrics, stats, files);
    } else if (cfg.subcommand == "demo-intersect") {
      code = do_demo_intersect(cfg, dir, metrics, stats, files);
    } else if (cfg.subcommand == "pde-fit") {
      code = do_pde_fit(cfg, dir, metrics, stats, files);
    } else if (cfg.subcommand == "timeseries") {
      code = do_timeseries(cfg, dir, metrics, stats, files);
    } else if (cfg.subcommand == "toy-classify") {
      code = do_toy_classify(cfg, dir, metrics, stats, files);
    } else if (cfg.subcommand == "cnf2d") {
      code = do_cnf2d(cfg, dir, metrics, stats, files);
    } else {
      throw ConfigError("unknown subcommand '" + cfg.subcommand + "'");
    }
  } catch (const ConfigError& e) {
    code = 1;
    error = e.what();
  } catch (const std::exception& e) {
    code = 2;
    error = e.what();
  }

  manifest["finished_at"] = iso_utc_now();
  manifest["metrics"] = metrics;
  manifest["stats"] = stats;
  manifest["files"] = files;
  manifest["error"] = error.empty() ? json() : json(error);
  manifest["exit_code"] = code;
  write_manifest(dir, manifest);

  if (!error.empty()) {
    std::cerr << "error: " << error << '\n';
  }
  std::cout << "run directory: " << dir.string() << '\n';
  return code;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"continuous-depth experiments along learned characteristics",
               "cnode"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  struct Flags {
    std::string config, out, grad_mode, method, variant, trace, dynamics;
    std::uint64_t seed = 0;
    double rtol = 0, atol = 0, t_end = 0;
    long long k = 0;
    int parallel = 0, probes = 0;
  } fl;

  const std::vector<std::pair<std::string, std::string>> subs = {
      {"demo-burgers", "characteristic lines of the 1-x ramp and their crossing"},
      {"demo-intersect", "frozen field whose trajectories swap 0 and 1"},
      {"pde-fit", "four-net regression of the transport equation"},
      {"timeseries", "extrapolation from a noisy scalar curve"},
      {"toy-classify", "annuli classification"},
      {"cnf2d", "two-Gaussian mixture density estimation"},
      {"gradcheck", "finite-difference check of every tape primitive"},
      {"solve", "integrate a named dynamics and print the endpoint"}};

  for (const auto& [name, desc] : subs) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", fl.config, "key=value config file");
    sub->add_option("--seed", fl.seed, "rng seed, recorded in the manifest");
    sub->add_option("--out", fl.out, "output root directory");
    sub->add_option("--grad-mode", fl.grad_mode, "adjoint or discrete");
    sub->add_option("--solver", fl.method, "euler, rk4, or dopri5");
    sub->add_option("--rtol", fl.rtol, "adaptive relative tolerance");
    sub->add_option("--atol", fl.atol, "adaptive absolute tolerance");
    sub->add_option("--k", fl.k, "characteristic dimension");
    sub->add_option("--parallel", fl.parallel,
                    "worker threads; summation order may perturb last digits");
    if (name == "solve") {
      sub->add_option("--dynamics", fl.dynamics, "decay or linear2");
      sub->add_option("--t", fl.t_end, "integration endpoint");
    }
    if (name == "pde-fit" || name == "timeseries") {
      sub->add_option("--variant", fl.variant, "cnode or node");
    }
    if (name == "cnf2d") {
      sub->add_option("--trace", fl.trace, "exact or hutchinson");
      sub->add_option("--probes", fl.probes, "hutchinson probe count");
    }
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  CLI::App* active = app.get_subcommands().front();
  auto given = [&](const char* name) {
    const CLI::Option* opt = active->get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
  };
  RunConfig cfg;
  try {
    if (given("--config")) cfg = load_config(fl.config);
    cfg.subcommand = active->get_name();
    if (given("--seed")) cfg.seed = fl.seed;
    if (given("--out")) cfg.out = fl.out;
    if (given("--grad-mode")) cfg.grad_mode = fl.grad_mode;
    if (given("--solver")) cfg.method = fl.method;
    if (given("--rtol")) cfg.rtol = fl.rtol;
    if (given("--atol")) cfg.atol = fl.atol;
    if (given("--k")) cfg.k = static_cast<Index>(fl.k);
    if (given("--parallel")) cfg.parallel = fl.parallel;
    if (given("--dynamics")) cfg.dynamics = fl.dynamics;
    if (given("--t")) cfg.t_end = fl.t_end;
    if (given("--variant")) cfg.variant = fl.variant;
    if (given("--trace")) cfg.trace = fl.trace;
    if (given("--probes")) cfg.probes = fl.probes;
    validate_config(cfg);
    if (cfg.parallel > 1) {
      std::cerr << "note: --parallel " << cfg.parallel
                << " may perturb the last digits of summed metrics\n";
    }
    return run_configured(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  args.reserve(static_cast<std::size_t>(argc > 0 ? argc - 1 : 0));
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace cnode::cli
