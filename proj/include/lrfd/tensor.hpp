#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "lrfd/common.hpp"

namespace lrfd {

// Dense row-major tensor. Shape is an explicit dimension list; images use
// [B, C, H, W] and intensities live in [-1, 1].
template <typename T>
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape, T fill_value = T(0))
      : shape_(std::move(shape)) {
    for (int d : shape_) require(d > 0, "tensor dims must be positive, got ", d);
    data_.assign(numel_of(shape_), fill_value);
  }

  Tensor(std::vector<int> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    require(numel_of(shape_) == data_.size(),
            "shape/data mismatch: shape wants ", numel_of(shape_),
            " values, got ", data_.size());
  }

  static std::size_t numel_of(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= std::size_t(d);
    return n;
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_[std::size_t(i)]; }
  int rank() const { return int(shape_.size()); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // 4-d accessor for [B, C, H, W] layouts.
  T& at4(int b, int c, int h, int w) {
    return data_[((std::size_t(b) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at4(int b, int c, int h, int w) const {
    return data_[((std::size_t(b) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  // 3-d accessor for [C, H, W] images.
  T& at3(int c, int h, int w) {
    return data_[(std::size_t(c) * shape_[1] + h) * shape_[2] + w];
  }
  const T& at3(int c, int h, int w) const {
    return data_[(std::size_t(c) * shape_[1] + h) * shape_[2] + w];
  }
  T& at2(int i, int j) { return data_[std::size_t(i) * shape_[1] + j]; }
  const T& at2(int i, int j) const { return data_[std::size_t(i) * shape_[1] + j]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(double(v))) return false;
    return true;
  }

  Tensor reshaped(std::vector<int> new_shape) const {
    require(numel_of(new_shape) == data_.size(), "reshape changes element count");
    Tensor out;
    out.shape_ = std::move(new_shape);
    out.data_ = data_;
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out = Tensor<U>(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = U(data_[i]);
    return out;
  }

  static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

  static Tensor random_uniform(std::vector<int> shape, Rng& rng, T lo, T hi) {
    Tensor out(std::move(shape));
    for (auto& v : out.data_) v = T(rng.uniform(double(lo), double(hi)));
    return out;
  }

  static Tensor random_normal(std::vector<int> shape, Rng& rng, T stddev = T(1)) {
    Tensor out(std::move(shape));
    for (auto& v : out.data_) v = T(rng.normal() * double(stddev));
    return out;
  }

private:
  std::vector<int> shape_;
  std::vector<T> data_;
};

template <typename T>
std::string shape_str(const Tensor<T>& t) {
  std::string s = "[";
  for (int i = 0; i < t.rank(); ++i) {
    if (i) s += "x";
    s += std::to_string(t.dim(i));
  }
  return s + "]";
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace lrfd
