#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "lrfd/gemm.hpp"
#include "lrfd/graph.hpp"

namespace lrfd {

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

namespace detail {

// cols[(ci*KH+ki)*KW+kj, oh*OW+ow] = x[b,ci,oh*s-p+ki,ow*s-p+kj]
template <typename T>
void im2col(const Tensor<T>& x, int b, int KH, int KW, int stride, int pad,
            int OH, int OW, T* cols) {
  const int C = x.dim(1), H = x.dim(2), W = x.dim(3);
  std::size_t row = 0;
  for (int ci = 0; ci < C; ++ci) {
    for (int ki = 0; ki < KH; ++ki) {
      for (int kj = 0; kj < KW; ++kj, ++row) {
        T* dst = cols + row * std::size_t(OH) * OW;
        for (int oh = 0; oh < OH; ++oh) {
          const int ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= H) {
            for (int ow = 0; ow < OW; ++ow) dst[oh * OW + ow] = T(0);
            continue;
          }
          const T* src = &x.at4(b, ci, ih, 0);
          for (int ow = 0; ow < OW; ++ow) {
            const int iw = ow * stride - pad + kj;
            dst[oh * OW + ow] = (iw < 0 || iw >= W) ? T(0) : src[iw];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_acc(const T* cols, int b, int C, int H, int W, int KH, int KW,
                int stride, int pad, int OH, int OW, Tensor<T>& dx) {
  std::size_t row = 0;
  for (int ci = 0; ci < C; ++ci) {
    for (int ki = 0; ki < KH; ++ki) {
      for (int kj = 0; kj < KW; ++kj, ++row) {
        const T* src = cols + row * std::size_t(OH) * OW;
        for (int oh = 0; oh < OH; ++oh) {
          const int ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= H) continue;
          for (int ow = 0; ow < OW; ++ow) {
            const int iw = ow * stride - pad + kj;
            if (iw < 0 || iw >= W) continue;
            dx.at4(b, ci, ih, iw) += src[oh * OW + ow];
          }
        }
      }
    }
  }
}

}  // namespace detail

// x:[B,Cin,H,W] * w:[Cout,Cin,KH,KW] (+ bias:[Cout]) -> [B,Cout,OH,OW].
// Batch items are independent, so the forward/backward GEMMs run in
// parallel across items; weight-gradient contributions are reduced in
// batch order to keep results independent of the thread count.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, int stride,
              int pad) {
  const auto& xs = x.value().shape();
  const auto& ws = w.value().shape();
  require(xs.size() == 4 && ws.size() == 4,
          "conv2d wants 4-d input/kernel, got ", shape_str(xs), " and ", shape_str(ws));
  require(xs[1] == ws[1], "conv2d channel mismatch: input ", shape_str(xs),
          " vs kernel ", shape_str(ws));
  require(stride >= 1, "conv2d stride must be >= 1");
  const int B = xs[0], H = xs[2], W = xs[3];
  const int Cout = ws[0], KH = ws[2], KW = ws[3];
  const int OH = (H + 2 * pad - KH) / stride + 1;
  const int OW = (W + 2 * pad - KW) / stride + 1;
  require(OH >= 1 && OW >= 1, "conv2d output collapsed: input ", shape_str(xs),
          " kernel ", shape_str(ws));
  const int K = ws[1] * KH * KW;
  const std::size_t spatial = std::size_t(OH) * OW;

  const bool needs_grad = detail::any_requires<T>({&x, &w, &bias});
  auto cols = std::make_shared<Tensor<T>>(std::vector<int>{B, K, int(spatial)});
  Tensor<T> out({B, Cout, OH, OW});
  const bool has_bias = bias.defined();
  if (has_bias)
    require(bias.value().rank() == 1 && bias.value().dim(0) == Cout,
            "conv2d bias shape ", shape_str(bias.value()), " wants [", Cout, "]");

  parallel_for(B, [&](int b) {
    T* cb = cols->data() + std::size_t(b) * K * spatial;
    detail::im2col(x.value(), b, KH, KW, stride, pad, OH, OW, cb);
    T* ob = out.data() + std::size_t(b) * Cout * spatial;
    gemm_set(w.value().data(), cb, ob, Cout, K, int(spatial));
    if (has_bias)
      for (int co = 0; co < Cout; ++co) {
        const T bv = bias.value()[std::size_t(co)];
        T* row = ob + std::size_t(co) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) row[i] += bv;
      }
  });

  if (!needs_grad) return Var<T>::constant(std::move(out));

  std::vector<NodePtr<T>> parents{x.node(), w.node()};
  if (has_bias) parents.push_back(bias.node());
  auto backward = [cols, B, Cout, K, spatial, KH, KW, stride, pad, OH, OW,
                   has_bias](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    const int Cin = px->value.dim(1), H = px->value.dim(2), W = px->value.dim(3);

    if (pw->requires_grad) {
      pw->ensure_grad();
      Tensor<T> dw_all({B, Cout, K});
      parallel_for(B, [&](int b) {
        // dW_b = dY_b * cols_b^T
        const T* dy = self.grad.data() + std::size_t(b) * Cout * spatial;
        const T* cb = cols->data() + std::size_t(b) * K * spatial;
        std::vector<T> colsT(spatial * K);
        transpose_copy(cb, colsT.data(), K, int(spatial));
        gemm_set(dy, colsT.data(), dw_all.data() + std::size_t(b) * Cout * K,
                 Cout, int(spatial), K);
      });
      T* dw = pw->grad.data();
      for (int b = 0; b < B; ++b) {
        const T* src = dw_all.data() + std::size_t(b) * Cout * K;
        for (std::size_t i = 0; i < std::size_t(Cout) * K; ++i) dw[i] += src[i];
      }
    }
    if (px->requires_grad) {
      px->ensure_grad();
      std::vector<T> wT(std::size_t(K) * Cout);
      transpose_copy(pw->value.data(), wT.data(), Cout, K);
      parallel_for(B, [&](int b) {
        const T* dy = self.grad.data() + std::size_t(b) * Cout * spatial;
        std::vector<T> dcols(std::size_t(K) * spatial);
        gemm_set(wT.data(), dy, dcols.data(), K, Cout, int(spatial));
        detail::col2im_acc(dcols.data(), b, Cin, H, W, KH, KW, stride, pad, OH,
                           OW, px->grad);
      });
    }
    if (has_bias && self.parents[2]->requires_grad) {
      auto& pb = self.parents[2];
      pb->ensure_grad();
      for (int b = 0; b < B; ++b)
        for (int co = 0; co < Cout; ++co) {
          const T* g = self.grad.data() + (std::size_t(b) * Cout + co) * spatial;
          T acc = T(0);
          for (std::size_t i = 0; i < spatial; ++i) acc += g[i];
          pb->grad[std::size_t(co)] += acc;
        }
    }
  };
  return detail::make_op<T>(std::move(out), std::move(parents), std::move(backward));
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, int stride, int pad) {
  return conv2d(x, w, Var<T>(), stride, pad);
}

// ---------------------------------------------------------------------------
// Pooling (2x2, stride 2). Inputs must have even spatial dims; there is no
// implicit padding.
// ---------------------------------------------------------------------------

template <typename T>
Var<T> avg_pool2(const Var<T>& x) {
  const auto& s = x.value().shape();
  require(s.size() == 4, "avg_pool2 wants 4-d input, got ", shape_str(s));
  require(s[2] % 2 == 0 && s[3] % 2 == 0, "avg_pool2 needs even H,W, got ", shape_str(s));
  const int B = s[0], C = s[1], OH = s[2] / 2, OW = s[3] / 2;
  Tensor<T> out({B, C, OH, OW});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow) {
          const T v = x.value().at4(b, c, 2 * oh, 2 * ow) +
                      x.value().at4(b, c, 2 * oh, 2 * ow + 1) +
                      x.value().at4(b, c, 2 * oh + 1, 2 * ow) +
                      x.value().at4(b, c, 2 * oh + 1, 2 * ow + 1);
          out.at4(b, c, oh, ow) = v * T(0.25);
        }
  if (!x.requires_grad()) return Var<T>::constant(std::move(out));
  return detail::make_op<T>(std::move(out), {x.node()}, [B, C, OH, OW](Node<T>& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int oh = 0; oh < OH; ++oh)
          for (int ow = 0; ow < OW; ++ow) {
            const T g = self.grad.at4(b, c, oh, ow) * T(0.25);
            p->grad.at4(b, c, 2 * oh, 2 * ow) += g;
            p->grad.at4(b, c, 2 * oh, 2 * ow + 1) += g;
            p->grad.at4(b, c, 2 * oh + 1, 2 * ow) += g;
            p->grad.at4(b, c, 2 * oh + 1, 2 * ow + 1) += g;
          }
  });
}

// Gradient routes to the argmax element; ties break to the first element in
// row-major order.
template <typename T>
Var<T> max_pool2(const Var<T>& x) {
  const auto& s = x.value().shape();
  require(s.size() == 4, "max_pool2 wants 4-d input, got ", shape_str(s));
  require(s[2] % 2 == 0 && s[3] % 2 == 0, "max_pool2 needs even H,W, got ", shape_str(s));
  const int B = s[0], C = s[1], OH = s[2] / 2, OW = s[3] / 2;
  Tensor<T> out({B, C, OH, OW});
  auto argmax = std::make_shared<std::vector<std::uint8_t>>(out.size());
  std::size_t idx = 0;
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow, ++idx) {
          T best = x.value().at4(b, c, 2 * oh, 2 * ow);
          int best_k = 0, k = 0;
          for (int di = 0; di < 2; ++di)
            for (int dj = 0; dj < 2; ++dj, ++k) {
              const T v = x.value().at4(b, c, 2 * oh + di, 2 * ow + dj);
              if (v > best) { best = v; best_k = k; }
            }
          out.at4(b, c, oh, ow) = best;
          (*argmax)[idx] = std::uint8_t(best_k);
        }
  if (!x.requires_grad()) return Var<T>::constant(std::move(out));
  return detail::make_op<T>(std::move(out), {x.node()},
                            [B, C, OH, OW, argmax](Node<T>& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    std::size_t idx = 0;
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int oh = 0; oh < OH; ++oh)
          for (int ow = 0; ow < OW; ++ow, ++idx) {
            const int k = (*argmax)[idx];
            p->grad.at4(b, c, 2 * oh + k / 2, 2 * ow + k % 2) +=
                self.grad.at4(b, c, oh, ow);
          }
  });
}

template <typename T>
Var<T> upsample2_nearest(const Var<T>& x) {
  const auto& s = x.value().shape();
  require(s.size() == 4, "upsample2_nearest wants 4-d input, got ", shape_str(s));
  const int B = s[0], C = s[1], H = s[2], W = s[3];
  Tensor<T> out({B, C, 2 * H, 2 * W});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          const T v = x.value().at4(b, c, h, w);
          out.at4(b, c, 2 * h, 2 * w) = v;
          out.at4(b, c, 2 * h, 2 * w + 1) = v;
          out.at4(b, c, 2 * h + 1, 2 * w) = v;
          out.at4(b, c, 2 * h + 1, 2 * w + 1) = v;
        }
  if (!x.requires_grad()) return Var<T>::constant(std::move(out));
  return detail::make_op<T>(std::move(out), {x.node()}, [B, C, H, W](Node<T>& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w)
            p->grad.at4(b, c, h, w) += self.grad.at4(b, c, 2 * h, 2 * w) +
                                       self.grad.at4(b, c, 2 * h, 2 * w + 1) +
                                       self.grad.at4(b, c, 2 * h + 1, 2 * w) +
                                       self.grad.at4(b, c, 2 * h + 1, 2 * w + 1);
  });
}

// ---------------------------------------------------------------------------
// Fully connected: x:[B,Fin] * w:[Fout,Fin] + b -> [B,Fout]
// ---------------------------------------------------------------------------

template <typename T>
Var<T> fully_connected(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  const auto& xs = x.value().shape();
  const auto& ws = w.value().shape();
  require(xs.size() == 2 && ws.size() == 2 && xs[1] == ws[1],
          "fully_connected shape mismatch: ", shape_str(xs), " vs ", shape_str(ws));
  const int B = xs[0], Fin = xs[1], Fout = ws[0];
  Tensor<T> out({B, Fout});
  std::vector<T> wT(std::size_t(Fin) * Fout);
  transpose_copy(w.value().data(), wT.data(), Fout, Fin);
  gemm_set(x.value().data(), wT.data(), out.data(), B, Fin, Fout);
  const bool has_bias = bias.defined();
  if (has_bias) {
    require(bias.value().rank() == 1 && bias.value().dim(0) == Fout,
            "fully_connected bias shape ", shape_str(bias.value()));
    for (int b = 0; b < B; ++b)
      for (int f = 0; f < Fout; ++f) out.at2(b, f) += bias.value()[std::size_t(f)];
  }
  if (!detail::any_requires<T>({&x, &w, &bias})) return Var<T>::constant(std::move(out));
  std::vector<NodePtr<T>> parents{x.node(), w.node()};
  if (has_bias) parents.push_back(bias.node());
  return detail::make_op<T>(std::move(out), std::move(parents),
                            [B, Fin, Fout, has_bias](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    if (px->requires_grad) {
      px->ensure_grad();
      gemm_acc(self.grad.data(), pw->value.data(), px->grad.data(), B, Fout, Fin);
    }
    if (pw->requires_grad) {
      pw->ensure_grad();
      std::vector<T> dyT(std::size_t(Fout) * B);
      transpose_copy(self.grad.data(), dyT.data(), B, Fout);
      gemm_acc(dyT.data(), px->value.data(), pw->grad.data(), Fout, B, Fin);
    }
    if (has_bias && self.parents[2]->requires_grad) {
      auto& pb = self.parents[2];
      pb->ensure_grad();
      for (int b = 0; b < B; ++b)
        for (int f = 0; f < Fout; ++f) pb->grad[std::size_t(f)] += self.grad.at2(b, f);
    }
  });
}

// ---------------------------------------------------------------------------
// Batch normalization (per channel of [B,C,H,W]).
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;  // [C]
  Tensor<T> running_var;   // [C]
  T momentum = T(0.9);

  explicit BatchNormState(int channels = 0, T mom = T(0.9)) : momentum(mom) {
    if (channels > 0) {
      running_mean = Tensor<T>({channels}, T(0));
      running_var = Tensor<T>({channels}, T(1));
    }
  }
};

// Train mode normalizes with biased batch statistics and, when
// update_running is set, folds them into the running estimates. Eval mode
// normalizes with the running estimates. Train mode requires batch >= 2.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  BatchNormState<T>& state, bool train, bool update_running = true,
                  T eps = T(1e-5)) {
  const auto& s = x.value().shape();
  require(s.size() == 4, "batch_norm wants 4-d input, got ", shape_str(s));
  const int B = s[0], C = s[1], H = s[2], W = s[3];
  require(gamma.value().size() == std::size_t(C) && beta.value().size() == std::size_t(C),
          "batch_norm scale/shift must have ", C, " channels");
  if (train) require(B >= 2, "batch_norm train mode needs batch size >= 2, got ", B);
  require(state.running_mean.size() == std::size_t(C), "batch_norm state has wrong channel count");

  const std::size_t plane = std::size_t(H) * W;
  const T n_eff = T(B) * T(plane);

  auto mean = std::make_shared<Tensor<T>>(std::vector<int>{C});
  auto invstd = std::make_shared<Tensor<T>>(std::vector<int>{C});
  if (train) {
    for (int c = 0; c < C; ++c) {
      T m = T(0);
      for (int b = 0; b < B; ++b) {
        const T* p = &x.value().at4(b, c, 0, 0);
        for (std::size_t i = 0; i < plane; ++i) m += p[i];
      }
      m /= n_eff;
      T v = T(0);
      for (int b = 0; b < B; ++b) {
        const T* p = &x.value().at4(b, c, 0, 0);
        for (std::size_t i = 0; i < plane; ++i) {
          const T d = p[i] - m;
          v += d * d;
        }
      }
      v /= n_eff;
      (*mean)[std::size_t(c)] = m;
      (*invstd)[std::size_t(c)] = T(1) / std::sqrt(v + eps);
      if (update_running) {
        state.running_mean[std::size_t(c)] =
            state.momentum * state.running_mean[std::size_t(c)] + (T(1) - state.momentum) * m;
        state.running_var[std::size_t(c)] =
            state.momentum * state.running_var[std::size_t(c)] + (T(1) - state.momentum) * v;
      }
    }
  } else {
    for (int c = 0; c < C; ++c) {
      (*mean)[std::size_t(c)] = state.running_mean[std::size_t(c)];
      (*invstd)[std::size_t(c)] = T(1) / std::sqrt(state.running_var[std::size_t(c)] + eps);
    }
  }

  auto xhat = std::make_shared<Tensor<T>>(std::vector<int>{B, C, H, W});
  Tensor<T> out({B, C, H, W});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const T m = (*mean)[std::size_t(c)], is = (*invstd)[std::size_t(c)];
      const T g = gamma.value()[std::size_t(c)], bt = beta.value()[std::size_t(c)];
      const T* src = &x.value().at4(b, c, 0, 0);
      T* xh = &xhat->at4(b, c, 0, 0);
      T* dst = &out.at4(b, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        xh[i] = (src[i] - m) * is;
        dst[i] = g * xh[i] + bt;
      }
    }

  if (!detail::any_requires<T>({&x, &gamma, &beta}))
    return Var<T>::constant(std::move(out));
  return detail::make_op<T>(
      std::move(out), {x.node(), gamma.node(), beta.node()},
      [B, C, plane, n_eff, train, mean, invstd, xhat](Node<T>& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        for (int c = 0; c < C; ++c) {
          // channel reductions
          T sum_dy = T(0), sum_dy_xhat = T(0);
          for (int b = 0; b < B; ++b) {
            const T* g = &self.grad.at4(b, c, 0, 0);
            const T* xh = &xhat->at4(b, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
              sum_dy += g[i];
              sum_dy_xhat += g[i] * xh[i];
            }
          }
          if (pg->requires_grad) {
            pg->ensure_grad();
            pg->grad[std::size_t(c)] += sum_dy_xhat;
          }
          if (pb->requires_grad) {
            pb->ensure_grad();
            pb->grad[std::size_t(c)] += sum_dy;
          }
          if (px->requires_grad) {
            px->ensure_grad();
            const T gam = pg->value[std::size_t(c)];
            const T is = (*invstd)[std::size_t(c)];
            if (train) {
              const T k = gam * is / n_eff;
              for (int b = 0; b < B; ++b) {
                const T* g = &self.grad.at4(b, c, 0, 0);
                const T* xh = &xhat->at4(b, c, 0, 0);
                T* dx = &px->grad.at4(b, c, 0, 0);
                for (std::size_t i = 0; i < plane; ++i)
                  dx[i] += k * (n_eff * g[i] - sum_dy - xh[i] * sum_dy_xhat);
              }
            } else {
              for (int b = 0; b < B; ++b) {
                const T* g = &self.grad.at4(b, c, 0, 0);
                T* dx = &px->grad.at4(b, c, 0, 0);
                for (std::size_t i = 0; i < plane; ++i) dx[i] += gam * is * g[i];
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Spectral normalization (power iteration with persistent u).
// ---------------------------------------------------------------------------

template <typename T>
struct SpectralState {
  Tensor<T> u;  // [rows], kept unit norm
  Tensor<T> v;  // [cols], refreshed by update()
  int power_iters = 1;

  void init(int rows, int cols, Rng& rng) {
    u = Tensor<T>::random_normal({rows}, rng);
    T n = norm(u);
    if (n < T(1e-12)) { u.fill(T(0)); u[0] = T(1); n = T(1); }
    for (std::size_t i = 0; i < u.size(); ++i) u[i] /= n;
    v = Tensor<T>({cols}, T(0));
  }

  static T norm(const Tensor<T>& t) {
    T s = T(0);
    for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * t[i];
    return std::sqrt(s);
  }
};

namespace detail {

// weight viewed as [rows = shape[0], cols = numel/shape[0]]
template <typename T>
void sn_dims(const Tensor<T>& w, int& rows, int& cols) {
  rows = w.dim(0);
  cols = int(w.size() / std::size_t(rows));
}

template <typename T>
T sn_sigma(const Tensor<T>& w, const Tensor<T>& u, const Tensor<T>& v) {
  int rows, cols;
  sn_dims(w, rows, cols);
  T sigma = T(0);
  for (int r = 0; r < rows; ++r) {
    T dot = T(0);
    const T* wr = w.data() + std::size_t(r) * cols;
    for (int c = 0; c < cols; ++c) dot += wr[c] * v[std::size_t(c)];
    sigma += u[std::size_t(r)] * dot;
  }
  return sigma;
}

}  // namespace detail

// Runs state.power_iters rounds of v <- normalize(W^T u), u <- normalize(W v).
// Returns false when the weight is (numerically) zero, in which case u and v
// are left untouched.
template <typename T>
bool spectral_update(const Tensor<T>& w, SpectralState<T>& state) {
  int rows, cols;
  detail::sn_dims(w, rows, cols);
  require(int(state.u.size()) == rows, "spectral state rows mismatch");
  if (int(state.v.size()) != cols) state.v = Tensor<T>({cols}, T(0));
  Tensor<T> u = state.u, v({cols});
  for (int it = 0; it < state.power_iters; ++it) {
    for (int c = 0; c < cols; ++c) v[std::size_t(c)] = T(0);
    for (int r = 0; r < rows; ++r) {
      const T ur = u[std::size_t(r)];
      const T* wr = w.data() + std::size_t(r) * cols;
      for (int c = 0; c < cols; ++c) v[std::size_t(c)] += wr[c] * ur;
    }
    T nv = SpectralState<T>::norm(v);
    if (nv < T(1e-20)) return false;
    for (int c = 0; c < cols; ++c) v[std::size_t(c)] /= nv;
    for (int r = 0; r < rows; ++r) {
      T dot = T(0);
      const T* wr = w.data() + std::size_t(r) * cols;
      for (int c = 0; c < cols; ++c) dot += wr[c] * v[std::size_t(c)];
      u[std::size_t(r)] = dot;
    }
    T nu = SpectralState<T>::norm(u);
    if (nu < T(1e-20)) return false;
    for (int r = 0; r < rows; ++r) u[std::size_t(r)] /= nu;
  }
  state.u = std::move(u);
  state.v = std::move(v);
  return true;
}

// W / sigma_hat(W) with sigma_hat = u^T W v; u,v are treated as constants in
// the backward pass:
//   dL/dW = (dL/dW_hat - <dL/dW_hat, W_hat> u v^T) / sigma
// A zero weight matrix returns a zero matrix and leaves the state unchanged.
template <typename T>
Var<T> spectral_normalize(const Var<T>& w, SpectralState<T>& state,
                          bool update_state = true) {
  if (update_state) {
    if (!spectral_update(w.value(), state))
      return Var<T>::constant(Tensor<T>(w.value().shape(), T(0)));
  }
  int rows, cols;
  detail::sn_dims(w.value(), rows, cols);
  if (int(state.v.size()) != cols || SpectralState<T>::norm(state.v) < T(1e-20)) {
    // state never updated against this weight; do it once now
    if (!spectral_update(w.value(), state))
      return Var<T>::constant(Tensor<T>(w.value().shape(), T(0)));
  }
  const T sigma = detail::sn_sigma(w.value(), state.u, state.v);
  if (std::abs(double(sigma)) < 1e-20)
    return Var<T>::constant(Tensor<T>(w.value().shape(), T(0)));

  Tensor<T> out(w.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = w.value()[i] / sigma;
  if (!w.requires_grad()) return Var<T>::constant(std::move(out));

  auto u = std::make_shared<Tensor<T>>(state.u);
  auto v = std::make_shared<Tensor<T>>(state.v);
  return detail::make_op<T>(std::move(out), {w.node()},
                            [sigma, u, v, rows, cols](Node<T>& self) {
    auto& pw = self.parents[0];
    if (!pw->requires_grad) return;
    pw->ensure_grad();
    T inner = T(0);
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      inner += self.grad[i] * self.value[i];
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        const std::size_t i = std::size_t(r) * cols + c;
        pw->grad[i] +=
            (self.grad[i] - inner * (*u)[std::size_t(r)] * (*v)[std::size_t(c)]) / sigma;
      }
  });
}

// ---------------------------------------------------------------------------
// Layer modules: parameter bundles with a forward().
// ---------------------------------------------------------------------------

// Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
Tensor<T> init_fan_in_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
  const T bound = T(1) / std::sqrt(T(fan_in));
  return Tensor<T>::random_uniform(std::move(shape), rng, -bound, bound);
}

template <typename T>
struct Conv2d {
  Var<T> w, b;
  int stride = 1, pad = 1;
  bool spectral = false;
  SpectralState<T> sn;

  void init(int cin, int cout, int k, int stride_, int pad_, bool bias, bool spectral_,
            Rng& rng) {
    stride = stride_;
    pad = pad_;
    spectral = spectral_;
    const int fan_in = cin * k * k;
    w = Var<T>::leaf(init_fan_in_uniform<T>({cout, cin, k, k}, fan_in, rng), true);
    if (bias) w_bias_init(cout, fan_in, rng);
    if (spectral) sn.init(cout, cin * k * k, rng);
  }

  Var<T> forward(const Var<T>& x, bool sn_update) {
    Var<T> weff = spectral ? spectral_normalize(w, sn, sn_update) : w;
    return conv2d(x, weff, b, stride, pad);
  }

private:
  void w_bias_init(int cout, int fan_in, Rng& rng) {
    b = Var<T>::leaf(init_fan_in_uniform<T>({cout}, fan_in, rng), true);
  }
};

template <typename T>
struct BatchNorm2d {
  Var<T> gamma, beta;
  BatchNormState<T> state;

  void init(int channels, Rng&) {
    gamma = Var<T>::leaf(Tensor<T>({channels}, T(1)), true);
    beta = Var<T>::leaf(Tensor<T>({channels}, T(0)), true);
    state = BatchNormState<T>(channels);
  }

  Var<T> forward(const Var<T>& x, bool train, bool update_running = true) {
    return batch_norm(x, gamma, beta, state, train, update_running);
  }
};

template <typename T>
struct Linear {
  Var<T> w, b;
  bool spectral = false;
  SpectralState<T> sn;

  void init(int fin, int fout, bool spectral_, Rng& rng) {
    spectral = spectral_;
    w = Var<T>::leaf(init_fan_in_uniform<T>({fout, fin}, fin, rng), true);
    b = Var<T>::leaf(init_fan_in_uniform<T>({fout}, fin, rng), true);
    if (spectral) sn.init(fout, fin, rng);
  }

  Var<T> forward(const Var<T>& x, bool sn_update) {
    Var<T> weff = spectral ? spectral_normalize(w, sn, sn_update) : w;
    return fully_connected(x, weff, b);
  }
};

// conv-bn-relu, conv-bn, add shortcut, relu. A 1x1 projection is inserted
// when the channel counts differ. Discriminator variants drop the batch
// norms and put spectral normalization on every conv.
template <typename T>
struct ResidualBlock {
  Conv2d<T> conv1, conv2, proj;
  BatchNorm2d<T> bn1, bn2;
  bool use_bn = true;
  bool has_proj = false;

  void init(int cin, int cout, bool use_bn_, bool spectral, Rng& rng) {
    use_bn = use_bn_;
    has_proj = cin != cout;
    conv1.init(cin, cout, 3, 1, 1, /*bias=*/!use_bn_, spectral, rng);
    conv2.init(cout, cout, 3, 1, 1, /*bias=*/!use_bn_, spectral, rng);
    if (use_bn_) {
      bn1.init(cout, rng);
      bn2.init(cout, rng);
    }
    if (has_proj) proj.init(cin, cout, 1, 1, 0, /*bias=*/false, spectral, rng);
  }

  Var<T> forward(const Var<T>& x, bool train, bool sn_update) {
    Var<T> h = conv1.forward(x, sn_update);
    if (use_bn) h = bn1.forward(h, train);
    h = relu(h);
    h = conv2.forward(h, sn_update);
    if (use_bn) h = bn2.forward(h, train);
    Var<T> shortcut = has_proj ? proj.forward(x, sn_update) : x;
    return relu(add(h, shortcut));
  }
};

}  // namespace lrfd
