#pragma once

#include <cstdint>

namespace rrwave {

// Row-major C[M,N] (+)= A[M,K] * B[K,N].
//
// Accumulation over k runs in a fixed order for every output element and each
// element is written by exactly one thread, so results are bit-identical
// regardless of the worker count.
void gemm(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
          bool accumulate, int64_t lda, int64_t ldb, int64_t ldc, int nthreads = 0);

// Convenience: tightly packed operands.
inline void gemm(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
                 bool accumulate = false, int nthreads = 0) {
  gemm(a, b, c, m, k, n, accumulate, k, n, n, nthreads);
}

// out[j,i] = in[i,j] for in[M,N] row-major.
void transpose(const double* in, double* out, int64_t m, int64_t n, int64_t ld_in = 0,
               int64_t ld_out = 0);

}  // namespace rrwave
