#pragma once

#include <cmath>
#include <functional>

#include "lrfd/tensor.hpp"

namespace lrfd {

// Central finite differences: g_i = (f(x + h e_i) - f(x - h e_i)) / 2h.
// The verification oracle for every analytic gradient in this library;
// use double precision and h ~ 1e-5.
template <typename T>
Tensor<T> finite_diff_gradient(const std::function<T(const Tensor<T>&)>& f,
                               const Tensor<T>& x, T h) {
  require(h > T(0), "finite difference step must be positive");
  Tensor<T> g(x.shape());
  Tensor<T> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T xi = x[i];
    probe[i] = xi + h;
    const T fp = f(probe);
    probe[i] = xi - h;
    const T fm = f(probe);
    probe[i] = xi;
    require(std::isfinite(double(fp)) && std::isfinite(double(fm)),
            "finite_diff_gradient: non-finite function value at index ", i);
    g[i] = (fp - fm) / (T(2) * h);
  }
  return g;
}

// max_i |a_i - b_i| / max(1, max_i |b_i|)
template <typename T>
T max_relative_error(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.same_shape(b), "max_relative_error shape mismatch");
  T max_diff = T(0), max_ref = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    max_diff = std::max(max_diff, std::abs(a[i] - b[i]));
    max_ref = std::max(max_ref, std::abs(b[i]));
  }
  return max_diff / std::max(T(1), max_ref);
}

}  // namespace lrfd
