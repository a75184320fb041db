#pragma once

#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "cnode/common.hpp"

namespace cnode::diffcore {

// Flat 64-bit float storage plus a shape. Rank is 1 or 2 in practice;
// scalars are shape {1}. Data is row-major for rank 2.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<Index> shape)
      : shape_(std::move(shape)), data_(Vec::Zero(count(shape_))) {}

  Tensor(std::vector<Index> shape, Vec data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (count(shape_) != data_.size()) {
      throw DimensionError("Tensor", count(shape_), data_.size());
    }
  }

  static Tensor scalar(double v) {
    return Tensor({1}, Vec::Constant(1, v));
  }

  static Tensor vector(Vec v) {
    const Index n = v.size();
    return Tensor({n}, std::move(v));
  }

  static Tensor matrix(const Mat& m) {
    RowMat rm = m;
    return Tensor({m.rows(), m.cols()},
                  Eigen::Map<const Vec>(rm.data(), rm.size()));
  }

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

  const std::vector<Index>& shape() const { return shape_; }
  Index size() const { return data_.size(); }
  Index rank() const { return static_cast<Index>(shape_.size()); }

  Vec& data() { return data_; }
  const Vec& data() const { return data_; }

  double value() const {
    if (data_.size() != 1) {
      throw ContractError("Tensor::value: not a scalar, size " +
                          std::to_string(data_.size()));
    }
    return data_[0];
  }

  Index rows() const { return require_rank2("rows"), shape_[0]; }
  Index cols() const { return require_rank2("cols"), shape_[1]; }

  Eigen::Map<const RowMat> mat() const {
    require_rank2("mat");
    return {data_.data(), shape_[0], shape_[1]};
  }

  bool all_finite() const { return data_.allFinite(); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  static Index count(const std::vector<Index>& shape) {
    Index n = 1;
    for (Index d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }

 private:
  void require_rank2(const char* who) const {
    if (shape_.size() != 2) {
      throw ContractError(std::string("Tensor::") + who + ": rank " +
                          std::to_string(shape_.size()) + ", need 2");
    }
  }

  std::vector<Index> shape_;
  Vec data_;
};

}  // namespace cnode::diffcore
