#pragma once

#include <cstddef>
#include <vector>

#include "lrfd/tensor.hpp"

namespace lrfd {

// C[M,N] += A[M,K] * B[K,N], all row-major contiguous.
//
// The k loop is the middle loop, so every C[i][j] accumulates its products
// in ascending-k order. That fixes the floating-point result independent of
// how callers partition work across threads (they may only split disjoint
// output regions).
template <typename T>
void gemm_acc(const T* A, const T* B, T* C, int M, int K, int N) {
  for (int i = 0; i < M; ++i) {
    const T* a_row = A + std::size_t(i) * K;
    T* c_row = C + std::size_t(i) * N;
    for (int k = 0; k < K; ++k) {
      const T a = a_row[k];
      if (a == T(0)) continue;
      const T* b_row = B + std::size_t(k) * N;
      for (int j = 0; j < N; ++j) c_row[j] += a * b_row[j];
    }
  }
}

template <typename T>
void gemm_set(const T* A, const T* B, T* C, int M, int K, int N) {
  for (std::size_t i = 0; i < std::size_t(M) * N; ++i) C[i] = T(0);
  gemm_acc(A, B, C, M, K, N);
}

// Out[N,M] = In[M,N]^T.
template <typename T>
void transpose_copy(const T* in, T* out, int M, int N) {
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) out[std::size_t(j) * M + i] = in[std::size_t(i) * N + j];
}

}  // namespace lrfd
