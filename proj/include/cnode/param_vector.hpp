#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cnode/common.hpp"

namespace cnode::diffcore {

// One flat parameter vector tiled by named, ordered, disjoint segments.
// Optimizers see the flat view; model code addresses segments by name.
class ParamVector {
 public:
  ParamVector() = default;

  static ParamVector from_segments(
      const std::vector<std::pair<std::string, Vec>>& parts) {
    ParamVector pv;
    Index total = 0;
    for (const auto& [name, v] : parts) total += v.size();
    pv.values_ = Vec(total);
    Index off = 0;
    for (const auto& [name, v] : parts) {
      for (const auto& [existing, span] : pv.segments_) {
        if (existing == name) {
          throw ContractError("ParamVector: duplicate segment '" + name + "'");
        }
        (void)span;
      }
      pv.values_.segment(off, v.size()) = v;
      pv.segments_.emplace_back(name, Span{off, v.size()});
      off += v.size();
    }
    return pv;
  }

  Index size() const { return values_.size(); }
  Vec& values() { return values_; }
  const Vec& values() const { return values_; }

  bool has(const std::string& name) const {
    for (const auto& [n, s] : segments_) {
      if (n == name) return true;
      (void)s;
    }
    return false;
  }

  Eigen::Ref<Vec> segment(const std::string& name) {
    const Span s = find(name);
    return values_.segment(s.offset, s.len);
  }

  Eigen::Ref<const Vec> segment(const std::string& name) const {
    const Span s = find(name);
    return values_.segment(s.offset, s.len);
  }

  Index segment_offset(const std::string& name) const { return find(name).offset; }
  Index segment_size(const std::string& name) const { return find(name).len; }

  std::vector<std::pair<std::string, Vec>> split() const {
    std::vector<std::pair<std::string, Vec>> out;
    out.reserve(segments_.size());
    for (const auto& [n, s] : segments_) {
      out.emplace_back(n, values_.segment(s.offset, s.len));
    }
    return out;
  }

  const std::vector<std::string> segment_names() const {
    std::vector<std::string> names;
    names.reserve(segments_.size());
    for (const auto& [n, s] : segments_) {
      names.push_back(n);
      (void)s;
    }
    return names;
  }

  // Segment layout without the values, for building matching gradient vectors.
  ParamVector zeros_like() const {
    ParamVector pv;
    pv.values_ = Vec::Zero(values_.size());
    pv.segments_ = segments_;
    return pv;
  }

 private:
  struct Span {
    Index offset = 0;
    Index len = 0;
  };

  Span find(const std::string& name) const {
    for (const auto& [n, s] : segments_) {
      if (n == name) return s;
    }
    throw ContractError("ParamVector: no segment '" + name + "'");
  }

  Vec values_;
  std::vector<std::pair<std::string, Span>> segments_;
};

}  // namespace cnode::diffcore
