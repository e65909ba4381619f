#pragma once
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "dpu/errors.hpp"
#include "dpu/rng.hpp"

namespace dpu {

// Dense row-major n-d array. Complex-valued data is carried as a real pair
// with a leading dimension of size 2 (plane 0 = real, plane 1 = imaginary);
// every linear operator in this codebase acts identically on both planes,
// so no complex arithmetic is needed on tensors themselves.
template <typename Real>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    data_.assign(numel_of(shape_), Real(0));
  }
  Tensor(std::vector<std::size_t> shape, std::vector<Real> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel_of(shape_))
      throw DimensionError("Tensor: data size does not match shape");
  }

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<std::size_t> shape, Real v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }
  static Tensor scalar(Real v) { return Tensor({1}, {v}); }
  static Tensor randn(std::vector<std::size_t> shape, Rng& rng, Real stddev = Real(1)) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = static_cast<Real>(rng.normal()) * stddev;
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_.size(); }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  std::vector<Real>& vec() { return data_; }
  const std::vector<Real>& vec() const { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor reshaped(std::vector<std::size_t> shape) const {
    if (numel_of(shape) != numel()) throw DimensionError("reshape: element count mismatch");
    return Tensor(std::move(shape), data_);
  }

  bool all_finite() const {
    for (Real v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> d(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) d[i] = static_cast<Other>(data_[i]);
    return Tensor<Other>(shape_, std::move(d));
  }

  static std::size_t numel_of(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }

  static std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i)
      s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<Real> data_;
};

using TensorD = Tensor<double>;
using TensorF = Tensor<float>;

}  // namespace dpu
