#pragma once

#include <cstddef>
#include <cstring>

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#define BCFNET_GEMM_AVX2 1
#endif

namespace bcfnet {
namespace detail {

// C[M x N] = (acc ? C : 0) + A[M x K] * B[K x N], all row-major, contiguous.
// The batch GEMM behind every dense layer; backward passes are expressed
// through it as well (with operands transposed into scratch beforehand).
template <typename T>
void gemm_nn_scalar(const T* A, const T* B, T* C, int M, int K, int N,
                    bool acc) {
  for (int i = 0; i < M; ++i) {
    T* ci = C + static_cast<size_t>(i) * N;
    if (!acc) {
      for (int j = 0; j < N; ++j) ci[j] = T(0);
    }
    const T* ai = A + static_cast<size_t>(i) * K;
    for (int k = 0; k < K; ++k) {
      T a = ai[k];
      if (a == T(0)) continue;
      const T* bk = B + static_cast<size_t>(k) * N;
      for (int j = 0; j < N; ++j) ci[j] += a * bk[j];
    }
  }
}

#ifdef BCFNET_GEMM_AVX2

// 4x16 micro-kernel: 8 ymm accumulators held across the K loop.
inline void sgemm_kernel_4x16(const float* A, const float* B, float* C, int K,
                              int N, bool acc) {
  __m256 c00, c01, c10, c11, c20, c21, c30, c31;
  if (acc) {
    c00 = _mm256_loadu_ps(C);
    c01 = _mm256_loadu_ps(C + 8);
    c10 = _mm256_loadu_ps(C + N);
    c11 = _mm256_loadu_ps(C + N + 8);
    c20 = _mm256_loadu_ps(C + 2 * N);
    c21 = _mm256_loadu_ps(C + 2 * N + 8);
    c30 = _mm256_loadu_ps(C + 3 * N);
    c31 = _mm256_loadu_ps(C + 3 * N + 8);
  } else {
    c00 = c01 = c10 = c11 = c20 = c21 = c30 = c31 = _mm256_setzero_ps();
  }
  const float* a0 = A;
  const float* a1 = A + K;
  const float* a2 = A + 2 * K;
  const float* a3 = A + 3 * K;
  for (int k = 0; k < K; ++k) {
    const float* bk = B + static_cast<size_t>(k) * N;
    __m256 b0 = _mm256_loadu_ps(bk);
    __m256 b1 = _mm256_loadu_ps(bk + 8);
    __m256 a;
    a = _mm256_broadcast_ss(a0 + k);
    c00 = _mm256_fmadd_ps(a, b0, c00);
    c01 = _mm256_fmadd_ps(a, b1, c01);
    a = _mm256_broadcast_ss(a1 + k);
    c10 = _mm256_fmadd_ps(a, b0, c10);
    c11 = _mm256_fmadd_ps(a, b1, c11);
    a = _mm256_broadcast_ss(a2 + k);
    c20 = _mm256_fmadd_ps(a, b0, c20);
    c21 = _mm256_fmadd_ps(a, b1, c21);
    a = _mm256_broadcast_ss(a3 + k);
    c30 = _mm256_fmadd_ps(a, b0, c30);
    c31 = _mm256_fmadd_ps(a, b1, c31);
  }
  _mm256_storeu_ps(C, c00);
  _mm256_storeu_ps(C + 8, c01);
  _mm256_storeu_ps(C + N, c10);
  _mm256_storeu_ps(C + N + 8, c11);
  _mm256_storeu_ps(C + 2 * N, c20);
  _mm256_storeu_ps(C + 2 * N + 8, c21);
  _mm256_storeu_ps(C + 3 * N, c30);
  _mm256_storeu_ps(C + 3 * N + 8, c31);
}

// 1x16 kernel for row remainders.
inline void sgemm_kernel_1x16(const float* A, const float* B, float* C, int K,
                              int N, bool acc) {
  __m256 c0, c1;
  if (acc) {
    c0 = _mm256_loadu_ps(C);
    c1 = _mm256_loadu_ps(C + 8);
  } else {
    c0 = c1 = _mm256_setzero_ps();
  }
  for (int k = 0; k < K; ++k) {
    const float* bk = B + static_cast<size_t>(k) * N;
    __m256 a = _mm256_broadcast_ss(A + k);
    c0 = _mm256_fmadd_ps(a, _mm256_loadu_ps(bk), c0);
    c1 = _mm256_fmadd_ps(a, _mm256_loadu_ps(bk + 8), c1);
  }
  _mm256_storeu_ps(C, c0);
  _mm256_storeu_ps(C + 8, c1);
}

inline void gemm_nn_f32(const float* A, const float* B, float* C, int M, int K,
                        int N, bool acc) {
  const int NB = N & ~15;  // columns handled by the vector kernels
  const int MB = M & ~3;
  for (int j = 0; j < NB; j += 16) {
    for (int i = 0; i < MB; i += 4) {
      sgemm_kernel_4x16(A + static_cast<size_t>(i) * K, B + j,
                        C + static_cast<size_t>(i) * N + j, K, N, acc);
    }
    for (int i = MB; i < M; ++i) {
      sgemm_kernel_1x16(A + static_cast<size_t>(i) * K, B + j,
                        C + static_cast<size_t>(i) * N + j, K, N, acc);
    }
  }
  if (NB < N) {
    // scalar tail columns
    for (int i = 0; i < M; ++i) {
      const float* ai = A + static_cast<size_t>(i) * K;
      float* ci = C + static_cast<size_t>(i) * N;
      for (int j = NB; j < N; ++j) {
        float s = acc ? ci[j] : 0.0f;
        for (int k = 0; k < K; ++k) s += ai[k] * B[static_cast<size_t>(k) * N + j];
        ci[j] = s;
      }
    }
  }
}

#endif  // BCFNET_GEMM_AVX2

}  // namespace detail

template <typename T>
inline void gemm_nn(const T* A, const T* B, T* C, int M, int K, int N,
                    bool acc) {
  detail::gemm_nn_scalar(A, B, C, M, K, N, acc);
}

#ifdef BCFNET_GEMM_AVX2
template <>
inline void gemm_nn<float>(const float* A, const float* B, float* C, int M,
                           int K, int N, bool acc) {
  detail::gemm_nn_f32(A, B, C, M, K, N, acc);
}
#endif

// OUT[c x r] = IN[r x c]^T, row-major; blocked for cache friendliness.
template <typename T>
inline void transpose(const T* in, T* out, int r, int c) {
  constexpr int BS = 32;
  for (int i0 = 0; i0 < r; i0 += BS) {
    int i1 = i0 + BS < r ? i0 + BS : r;
    for (int j0 = 0; j0 < c; j0 += BS) {
      int j1 = j0 + BS < c ? j0 + BS : c;
      for (int i = i0; i < i1; ++i)
        for (int j = j0; j < j1; ++j)
          out[static_cast<size_t>(j) * r + i] = in[static_cast<size_t>(i) * c + j];
    }
  }
}

}  // namespace bcfnet
