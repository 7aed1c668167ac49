#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "onerec/error.hpp"

namespace onerec {

#ifdef ONEREC_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

int64_t shapeNumel(const std::vector<int>& shape);

// Dense row-major tensor. Rank 1 and 2 cover almost everything in this
// project; higher ranks are stored but most kernels operate on matrices.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<Real> values);

  static Tensor scalar(Real v) { return Tensor({1}, {v}); }
  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, Real v);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const;
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool isScalar() const { return size() == 1; }

  // 2-D helpers; rank-1 tensors behave as a single row.
  int rows() const;
  int cols() const;

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  Real& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  Real operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
  Real& at(int r, int c);
  Real at(int r, int c) const;
  Real item() const;  // value of a scalar tensor

  void fill(Real v);
  bool sameShape(const Tensor& o) const { return shape_ == o.shape_; }
  bool allFinite() const;
  std::string shapeStr() const;

  const std::vector<Real>& values() const { return data_; }

 private:
  std::vector<int> shape_;
  std::vector<Real> data_;
};

std::string shapeStr(const std::vector<int>& shape);

}  // namespace onerec
