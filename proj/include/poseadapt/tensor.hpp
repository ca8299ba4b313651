// Minimal dense row-major tensor of `real`, plus Eigen matrix views used by
// the convolution and kernel code.
#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "poseadapt/common.hpp"

namespace poseadapt {

using MatrixRM =
    Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(numel_of(shape_), real(0));
  }
  Tensor(std::initializer_list<int> shape)
      : Tensor(std::vector<int>(shape)) {}

  static Tensor filled(std::vector<int> shape, real value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_[size_t(i)]; }
  int rank() const { return int(shape_.size()); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  real* data() { return data_.data(); }
  const real* data() const { return data_.data(); }
  real& operator[](std::size_t i) { return data_[i]; }
  real operator[](std::size_t i) const { return data_[i]; }

  // Indexed access for ranks 2..4 (row-major).
  real& at(int i, int j) { return data_[std::size_t(i) * shape_[1] + j]; }
  real at(int i, int j) const { return data_[std::size_t(i) * shape_[1] + j]; }
  real& at(int i, int j, int k) {
    return data_[(std::size_t(i) * shape_[1] + j) * shape_[2] + k];
  }
  real at(int i, int j, int k) const {
    return data_[(std::size_t(i) * shape_[1] + j) * shape_[2] + k];
  }
  real& at(int i, int j, int k, int l) {
    return data_[((std::size_t(i) * shape_[1] + j) * shape_[2] + k) *
                     shape_[3] +
                 l];
  }
  real at(int i, int j, int k, int l) const {
    return data_[((std::size_t(i) * shape_[1] + j) * shape_[2] + k) *
                     shape_[3] +
                 l];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void zero() { std::fill(data_.begin(), data_.end(), real(0)); }

  bool all_finite() const {
    for (real v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  // View as a rows x cols row-major matrix (must match numel).
  MapRM mat(int rows, int cols) {
    POSEADAPT_CHECK(std::size_t(rows) * std::size_t(cols) == numel(),
                    "tensor mat view size mismatch");
    return MapRM(data(), rows, cols);
  }
  ConstMapRM mat(int rows, int cols) const {
    POSEADAPT_CHECK(std::size_t(rows) * std::size_t(cols) == numel(),
                    "tensor mat view size mismatch");
    return ConstMapRM(data(), rows, cols);
  }

  Tensor& operator+=(const Tensor& o) {
    POSEADAPT_CHECK(same_shape(o), "tensor shape mismatch in +=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    POSEADAPT_CHECK(same_shape(o), "tensor shape mismatch in -=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(real s) {
    for (real& v : data_) v *= s;
    return *this;
  }

  friend Tensor operator-(const Tensor& a, const Tensor& b) {
    Tensor r = a;
    r -= b;
    return r;
  }
  friend Tensor operator+(const Tensor& a, const Tensor& b) {
    Tensor r = a;
    r += b;
    return r;
  }

  static std::size_t numel_of(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      POSEADAPT_CHECK(d >= 0, "negative tensor dimension");
      n *= std::size_t(d);
    }
    return n;
  }

 private:
  std::vector<int> shape_;
  std::vector<real> data_;
};

// axpy-style accumulate: dst += s * src.
inline void add_scaled(Tensor& dst, const Tensor& src, real s) {
  POSEADAPT_CHECK(dst.same_shape(src), "tensor shape mismatch in add_scaled");
  real* d = dst.data();
  const real* a = src.data();
  for (std::size_t i = 0; i < dst.numel(); ++i) d[i] += s * a[i];
}

}  // namespace poseadapt
