#include "cnode/cli/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

namespace cnode::cli {

namespace {

std::string trim(const std::string& s) {
  const auto from = s.find_first_not_of(" \t\r");
  if (from == std::string::npos) return "";
  const auto to = s.find_last_not_of(" \t\r");
  return s.substr(from, to - from + 1);
}

[[noreturn]] void fail(int line, const std::string& msg) {
  throw ConfigError("config line " + std::to_string(line) + ": " + msg);
}

double to_double(const std::string& raw, const std::string& key, int line) {
  char* end = nullptr;
  const double v = std::strtod(raw.c_str(), &end);
  if (end != raw.c_str() + raw.size() || raw.empty()) {
    fail(line, "key '" + key + "' needs a number, got '" + raw + "'");
  }
  return v;
}

long long to_int(const std::string& raw, const std::string& key, int line) {
  char* end = nullptr;
  const long long v = std::strtoll(raw.c_str(), &end, 10);
  if (end != raw.c_str() + raw.size() || raw.empty()) {
    fail(line, "key '" + key + "' needs an integer, got '" + raw + "'");
  }
  return v;
}

std::uint64_t to_u64(const std::string& raw, const std::string& key, int line) {
  char* end = nullptr;
  const unsigned long long v = std::strtoull(raw.c_str(), &end, 10);
  if (end != raw.c_str() + raw.size() || raw.empty() || raw[0] == '-') {
    fail(line, "key '" + key + "' needs a non-negative integer, got '" + raw + "'");
  }
  return v;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct KeyHandler {
  std::string section;
  std::string key;
  std::function<void(RunConfig&, const std::string&, int)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<KeyHandler>& schema() {
  auto str = [](std::string RunConfig::* field) {
    return KeyHandler{
        "", "",
        [field](RunConfig& c, const std::string& raw, int) { c.*field = raw; },
        [field](const RunConfig& c) { return c.*field; }};
  };
  auto dbl = [](double RunConfig::* field) {
    return KeyHandler{
        "", "",
        [field](RunConfig& c, const std::string& raw, int line) {
          c.*field = to_double(raw, "", line);
        },
        [field](const RunConfig& c) { return fmt_double(c.*field); }};
  };
  auto int_field = [](auto RunConfig::* field) {
    using T = std::decay_t<decltype(std::declval<RunConfig>().*field)>;
    return KeyHandler{
        "", "",
        [field](RunConfig& c, const std::string& raw, int line) {
          c.*field = static_cast<T>(to_int(raw, "", line));
        },
        [field](const RunConfig& c) { return std::to_string(c.*field); }};
  };

  static const std::vector<KeyHandler> table = [&] {
    std::vector<KeyHandler> t;
    auto add = [&](const std::string& section, const std::string& key,
                   KeyHandler h) {
      h.section = section;
      h.key = key;
      // Re-wrap so number errors name the key.
      auto inner = h.set;
      h.set = [inner, section, key](RunConfig& c, const std::string& raw,
                                    int line) {
        try {
          inner(c, raw, line);
        } catch (const ConfigError&) {
          fail(line, "key '" + section + "." + key + "' rejected value '" +
                         raw + "'");
        }
      };
      t.push_back(std::move(h));
    };

    add("run", "subcommand", str(&RunConfig::subcommand));
    add("run", "seed",
        {"", "",
         [](RunConfig& c, const std::string& raw, int line) {
           c.seed = to_u64(raw, "seed", line);
         },
         [](const RunConfig& c) { return std::to_string(c.seed); }});
    add("run", "out", str(&RunConfig::out));
    add("run", "parallel", int_field(&RunConfig::parallel));

    add("solver", "method", str(&RunConfig::method));
    add("solver", "h", dbl(&RunConfig::h));
    add("solver", "rtol", dbl(&RunConfig::rtol));
    add("solver", "atol", dbl(&RunConfig::atol));
    add("solver", "max_steps", int_field(&RunConfig::max_steps));

    add("train", "epochs", int_field(&RunConfig::epochs));
    add("train", "batch_size", int_field(&RunConfig::batch_size));
    add("train", "lr", dbl(&RunConfig::lr));
    add("train", "grad_mode", str(&RunConfig::grad_mode));

    add("model", "k", int_field(&RunConfig::k));

    add("task", "n_train", int_field(&RunConfig::n_train));
    add("task", "n_test", int_field(&RunConfig::n_test));
    add("task", "per_window", int_field(&RunConfig::per_window));
    add("task", "sigma", dbl(&RunConfig::sigma));
    add("task", "x_lo", dbl(&RunConfig::x_lo));
    add("task", "x_hi", dbl(&RunConfig::x_hi));
    add("task", "toy", str(&RunConfig::toy));
    add("task", "variant", str(&RunConfig::variant));
    add("task", "quad_steps", int_field(&RunConfig::quad_steps));

    add("cnf", "trace", str(&RunConfig::trace));
    add("cnf", "probes", int_field(&RunConfig::probes));

    add("solve", "dynamics", str(&RunConfig::dynamics));
    add("solve", "t", dbl(&RunConfig::t_end));
    return t;
  }();
  return table;
}

void check_choice(const std::string& field, const std::string& value,
                  std::initializer_list<const char*> allowed) {
  for (const char* a : allowed) {
    if (value == a) return;
  }
  std::string list;
  for (const char* a : allowed) {
    if (!list.empty()) list += ", ";
    list += a;
  }
  throw ConfigError("'" + value + "' is not a valid " + field + " (one of: " +
                    list + ")");
}

void check_positive(const std::string& field, double v) {
  if (!(v > 0)) {
    throw ConfigError(field + " must be positive, got " + fmt_double(v));
  }
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw = raw.substr(0, hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(line_no, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) fail(line_no, "empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(line_no, "expected 'key = value', got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail(line_no, "missing key before '='");
    if (section.empty()) {
      fail(line_no, "key '" + key + "' appears before any [section]");
    }
    bool found = false;
    for (const auto& h : schema()) {
      if (h.section == section && h.key == key) {
        h.set(cfg, value, line_no);
        found = true;
        break;
      }
    }
    if (!found) {
      fail(line_no, "unknown key '" + section + "." + key + "'");
    }
  }
  validate_config(cfg);
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config(buf.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& h : schema()) {
    if (h.section != section) {
      if (!section.empty()) out += "\n";
      section = h.section;
      out += "[" + section + "]\n";
    }
    out += h.key + " = " + h.get(cfg) + "\n";
  }
  return out;
}

void validate_config(const RunConfig& cfg) {
  if (!cfg.subcommand.empty()) {
    check_choice("subcommand", cfg.subcommand,
                 {"demo-burgers", "demo-intersect", "pde-fit", "timeseries",
                  "toy-classify", "cnf2d", "gradcheck", "solve"});
  }
  check_choice("solver method", cfg.method, {"euler", "rk4", "dopri5"});
  check_choice("grad mode", cfg.grad_mode, {"adjoint", "discrete"});
  check_choice("toy dataset", cfg.toy,
               {"annuli", "reflection", "gaussian_mixture"});
  check_choice("variant", cfg.variant, {"cnode", "node"});
  check_choice("trace mode", cfg.trace, {"exact", "hutchinson"});
  check_positive("solver.h", cfg.h);
  check_positive("solver.rtol", cfg.rtol);
  check_positive("solver.atol", cfg.atol);
  check_positive("solver.max_steps", static_cast<double>(cfg.max_steps));
  if (cfg.epochs < 0) throw ConfigError("train.epochs must be >= 0");
  check_positive("train.batch_size", cfg.batch_size);
  check_positive("train.lr", cfg.lr);
  check_positive("model.k", static_cast<double>(cfg.k));
  check_positive("run.parallel", cfg.parallel);
  check_positive("task.n_train", static_cast<double>(cfg.n_train));
  check_positive("task.n_test", static_cast<double>(cfg.n_test));
  check_positive("task.per_window", static_cast<double>(cfg.per_window));
  if (cfg.sigma < 0) throw ConfigError("task.sigma must be >= 0");
  if (cfg.x_lo > cfg.x_hi) throw ConfigError("task.x_lo must be <= task.x_hi");
  check_positive("task.quad_steps", cfg.quad_steps);
  check_positive("cnf.probes", cfg.probes);
}

}  // namespace cnode::cli
