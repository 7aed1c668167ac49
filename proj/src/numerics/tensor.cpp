#include "onerec/numerics/tensor.hpp"

#include <cmath>
#include <sstream>

namespace onerec {

int64_t shapeNumel(const std::vector<int>& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + shapeStr(shape));
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shapeNumel(shape_)), Real(0));
}

Tensor::Tensor(std::vector<int> shape, std::vector<Real> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (shapeNumel(shape_) != static_cast<int64_t>(data_.size())) {
    throw DimensionError("value count " + std::to_string(data_.size()) +
                         " does not match shape " + onerec::shapeStr(shape_));
  }
}

Tensor Tensor::full(std::vector<int> shape, Real v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

int Tensor::dim(int i) const {
  if (i < 0 || i >= rank()) throw IndexError("dim index out of range");
  return shape_[static_cast<size_t>(i)];
}

int Tensor::rows() const {
  if (rank() == 1) return 1;
  if (rank() == 2) return shape_[0];
  throw DimensionError("rows() requires rank <= 2, shape is " + onerec::shapeStr(shape_));
}

int Tensor::cols() const {
  if (rank() == 1) return shape_[0];
  if (rank() == 2) return shape_[1];
  throw DimensionError("cols() requires rank <= 2, shape is " + onerec::shapeStr(shape_));
}

Real& Tensor::at(int r, int c) {
  return data_[static_cast<size_t>(r) * static_cast<size_t>(cols()) + static_cast<size_t>(c)];
}

Real Tensor::at(int r, int c) const {
  return data_[static_cast<size_t>(r) * static_cast<size_t>(cols()) + static_cast<size_t>(c)];
}

Real Tensor::item() const {
  if (!isScalar()) throw ContractError("item() requires a scalar tensor, shape is " + onerec::shapeStr(shape_));
  return data_[0];
}

void Tensor::fill(Real v) {
  for (auto& x : data_) x = v;
}

bool Tensor::allFinite() const {
  for (Real x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

std::string Tensor::shapeStr() const { return onerec::shapeStr(shape_); }

std::string shapeStr(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

}  // namespace onerec
