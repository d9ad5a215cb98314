#include "rrwave/gemm.hpp"

#include <algorithm>

#include "rrwave/parallel.hpp"

namespace rrwave {

namespace {

constexpr int kMr = 6;
constexpr int kNr = 24;

// Full MR x NR register tile; the hot path.
void tile_full(const double* a, const double* b, double* c, int64_t k, int64_t lda, int64_t ldb,
               int64_t ldc) {
  double acc[kMr][kNr];
  for (int i = 0; i < kMr; ++i)
    for (int j = 0; j < kNr; ++j) acc[i][j] = c[i * ldc + j];
  for (int64_t p = 0; p < k; ++p) {
    const double* brow = b + p * ldb;
    for (int i = 0; i < kMr; ++i) {
      const double av = a[i * lda + p];
      for (int j = 0; j < kNr; ++j) acc[i][j] += av * brow[j];
    }
  }
  for (int i = 0; i < kMr; ++i)
    for (int j = 0; j < kNr; ++j) c[i * ldc + j] = acc[i][j];
}

void tile_edge(const double* a, const double* b, double* c, int64_t k, int mr, int nr, int64_t lda,
               int64_t ldb, int64_t ldc) {
  for (int64_t p = 0; p < k; ++p) {
    const double* brow = b + p * ldb;
    for (int i = 0; i < mr; ++i) {
      const double av = a[i * lda + p];
      double* crow = c + i * ldc;
      for (int j = 0; j < nr; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_rows(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
               int64_t lda, int64_t ldb, int64_t ldc) {
  for (int64_t m0 = 0; m0 < m; m0 += kMr) {
    const int mr = static_cast<int>(std::min<int64_t>(kMr, m - m0));
    for (int64_t n0 = 0; n0 < n; n0 += kNr) {
      const int nr = static_cast<int>(std::min<int64_t>(kNr, n - n0));
      if (mr == kMr && nr == kNr)
        tile_full(a + m0 * lda, b + n0, c + m0 * ldc + n0, k, lda, ldb, ldc);
      else
        tile_edge(a + m0 * lda, b + n0, c + m0 * ldc + n0, k, mr, nr, lda, ldb, ldc);
    }
  }
}

}  // namespace

void gemm(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
          bool accumulate, int64_t lda, int64_t ldb, int64_t ldc, int nthreads) {
  if (m <= 0 || n <= 0) return;
  if (!accumulate) {
    for (int64_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, 0.0);
  }
  if (k <= 0) return;
  // Parallel over row blocks only; each C element stays with one thread.
  const int64_t blocks = (m + kMr - 1) / kMr;
  parallel_for(
      blocks,
      [&](int64_t b0, int64_t b1) {
        const int64_t r0 = b0 * kMr;
        const int64_t r1 = std::min(m, b1 * kMr);
        gemm_rows(a + r0 * lda, b, c + r0 * ldc, r1 - r0, k, n, lda, ldb, ldc);
      },
      nthreads);
}

void transpose(const double* in, double* out, int64_t m, int64_t n, int64_t ld_in,
               int64_t ld_out) {
  if (ld_in == 0) ld_in = n;
  if (ld_out == 0) ld_out = m;
  constexpr int64_t kB = 32;
  for (int64_t i0 = 0; i0 < m; i0 += kB)
    for (int64_t j0 = 0; j0 < n; j0 += kB) {
      const int64_t i1 = std::min(m, i0 + kB), j1 = std::min(n, j0 + kB);
      for (int64_t i = i0; i < i1; ++i)
        for (int64_t j = j0; j < j1; ++j) out[j * ld_out + i] = in[i * ld_in + j];
    }
}

}  // namespace rrwave
