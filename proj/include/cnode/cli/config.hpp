#pragma once

#include <cstdint>
#include <string>

#include "cnode/common.hpp"

namespace cnode::cli {

// Everything a run needs, flat and serializable. The text form is
// [section]-grouped key=value lines; parsing rejects unknown keys so a
// misspelling can never fall back to a default silently.
struct RunConfig {
  // run
  std::string subcommand;
  std::uint64_t seed = 1;
  std::string out = "out";
  int parallel = 1;

  // solver
  std::string method = "dopri5";
  double h = 0.01;
  double rtol = 1e-6;
  double atol = 1e-8;
  long max_steps = 1000000;

  // train
  int epochs = 100;
  int batch_size = 32;
  double lr = 1e-3;
  std::string grad_mode = "discrete";

  // model
  Index k = 2;

  // task
  Index n_train = 200;
  Index n_test = 200;
  Index per_window = 64;
  double sigma = 0.1;
  double x_lo = 1.0;
  double x_hi = 2.0;
  std::string toy = "annuli";
  std::string variant = "cnode";
  int quad_steps = 20;

  // cnf
  std::string trace = "exact";
  int probes = 1;

  // solve
  std::string dynamics = "decay";
  double t_end = 1.0;

  bool operator==(const RunConfig&) const = default;
};

// Parses the flat text format. Errors carry the offending line number and
// key; values are validated (enumerations, positivity) as they are read.
RunConfig parse_config(const std::string& text);

RunConfig load_config(const std::string& path);

// Full echo of every key, grouped by section; parse_config round-trips it.
std::string serialize_config(const RunConfig& cfg);

// Validation shared by the parser and the flag layer; names the field.
void validate_config(const RunConfig& cfg);

}  // namespace cnode::cli
