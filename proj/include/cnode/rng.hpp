#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "cnode/common.hpp"

namespace cnode::diffcore {

// Deterministic random source. mt19937_64 has a fixed standard-mandated
// sequence; the mappings below avoid std::uniform_real_distribution and
// friends, whose output is implementation-defined, so streams are
// bit-identical across platforms for a given seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t raw() { return eng_(); }

  // [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; the spare is cached, so draws come in deterministic pairs.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double rademacher() { return (eng_() & 1u) ? 1.0 : -1.0; }

  // Uniform over {0, ..., n-1} by rejection, bias-free.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = eng_();
    while (v >= limit) v = eng_();
    return v % n;
  }

  Vec normal_vec(Index n) {
    Vec v(n);
    for (Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  Vec uniform_vec(Index n, double lo, double hi) {
    Vec v(n);
    for (Index i = 0; i < n; ++i) v[i] = uniform(lo, hi);
    return v;
  }

  Vec rademacher_vec(Index n) {
    Vec v(n);
    for (Index i = 0; i < n; ++i) v[i] = rademacher();
    return v;
  }

  template <typename T>
  void shuffle(std::vector<T>& xs) {
    for (std::size_t i = xs.size(); i > 1; --i) {
      std::swap(xs[i - 1], xs[below(i)]);
    }
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace cnode::diffcore
