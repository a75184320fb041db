#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace cnode {

// Deterministic fan-out over [begin, end): fixed contiguous shards whose
// partial totals are merged in shard order, so results do not depend on
// thread scheduling. Totals needs a default constructor and merge(Totals).
// The first exception thrown by any shard is rethrown after all join.
template <typename Totals, typename Body>
Totals sharded_reduce(std::size_t begin, std::size_t end, int shards,
                      Body&& body) {
  shards = std::max(1, shards);
  if (shards == 1 || end - begin < 2) {
    Totals totals;
    for (std::size_t i = begin; i < end; ++i) body(i, totals);
    return totals;
  }
  std::vector<Totals> parts(static_cast<std::size_t>(shards));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(shards));
  std::vector<std::thread> workers;
  const std::size_t total = end - begin;
  for (int w = 0; w < shards; ++w) {
    const std::size_t lo = begin + total * static_cast<std::size_t>(w) /
                                       static_cast<std::size_t>(shards);
    const std::size_t hi = begin + total * static_cast<std::size_t>(w + 1) /
                                       static_cast<std::size_t>(shards);
    workers.emplace_back([&, w, lo, hi]() {
      try {
        for (std::size_t i = lo; i < hi; ++i) {
          body(i, parts[static_cast<std::size_t>(w)]);
        }
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  Totals totals;
  for (const auto& p : parts) totals.merge(p);
  return totals;
}

}  // namespace cnode
