#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "rrwave/crc32.hpp"
#include "rrwave/fft.hpp"
#include "rrwave/gemm.hpp"
#include "rrwave/rng.hpp"

using namespace rrwave;

namespace {

// O(n^2) reference DFT, independent of the fft implementation.
std::vector<std::complex<double>> dft_ref(const std::vector<std::complex<double>>& x) {
  const size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (size_t j = 0; j < n; ++j) {
    std::complex<double> acc = 0;
    for (size_t t = 0; t < n; ++t)
      acc += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * double(j * t) / double(n));
    out[j] = acc;
  }
  return out;
}

}  // namespace

TEST_CASE("fft matches reference DFT on composite and prime lengths") {
  Rng rng(11);
  for (size_t n : {1u, 2u, 7u, 16u, 50u, 100u, 101u, 800u}) {
    std::vector<std::complex<double>> x(n);
    for (auto& v : x) v = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    auto got = fft(x);
    auto ref = dft_ref(x);
    double err = 0;
    for (size_t j = 0; j < n; ++j) err = std::max(err, std::abs(got[j] - ref[j]));
    CAPTURE(n);
    CHECK(err < 1e-9 * double(n));
  }
}

TEST_CASE("power spectrum satisfies Parseval and finds a pure tone") {
  const int n = 800;
  const double fs = 50.0;
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i) x[i] = 1.7 * std::sin(2.0 * std::numbers::pi * 1.25 * i / fs);
  auto p = power_spectrum(x);

  double total = 0, mean_sq = 0;
  for (double v : p) total += v;
  for (double v : x) mean_sq += v * v;
  mean_sq /= n;
  CHECK(std::abs(total - mean_sq) < 1e-9 * mean_sq);

  size_t peak = 0;
  for (size_t j = 1; j < p.size(); ++j)
    if (p[j] > p[peak]) peak = j;
  CHECK(peak == 20);  // 1.25 Hz * 800 / 50
  CHECK(p[peak] == doctest::Approx(1.7 * 1.7 / 2).epsilon(1e-9));
}

TEST_CASE("crc32 known vector") {
  const char* s = "123456789";
  CHECK(Crc32::of(s, 9) == 0xCBF43926u);
}

TEST_CASE("gemm matches naive product, with and without accumulation") {
  Rng rng(5);
  const std::vector<std::array<int, 3>> cases = {{1, 1, 1}, {3, 5, 7}, {13, 40, 25}, {64, 30, 64}};
  for (auto [m, k, n] : cases) {
    std::vector<double> a(size_t(m * k)), b(size_t(k * n)), c(size_t(m * n)), ref(size_t(m * n));
    for (auto& v : a) v = rng.uniform(-1, 1);
    for (auto& v : b) v = rng.uniform(-1, 1);
    for (auto& v : c) v = rng.uniform(-1, 1);
    ref = c;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        double acc = ref[size_t(i * n + j)];
        for (int p = 0; p < k; ++p) acc += a[size_t(i * k + p)] * b[size_t(p * n + j)];
        ref[size_t(i * n + j)] = acc;
      }
    gemm(a.data(), b.data(), c.data(), m, k, n, true);
    for (size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));

    gemm(a.data(), b.data(), c.data(), m, k, n, false);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        double acc = 0;
        for (int p = 0; p < k; ++p) acc += a[size_t(i * k + p)] * b[size_t(p * n + j)];
        CHECK(c[size_t(i * n + j)] == doctest::Approx(acc).epsilon(1e-12));
      }
  }
}

TEST_CASE("gemm result is identical for any thread count") {
  Rng rng(7);
  const int m = 37, k = 23, n = 29;
  std::vector<double> a(size_t(m * k)), b(size_t(k * n));
  for (auto& v : a) v = rng.uniform(-1, 1);
  for (auto& v : b) v = rng.uniform(-1, 1);
  std::vector<double> c1(size_t(m * n)), c4(size_t(m * n));
  gemm(a.data(), b.data(), c1.data(), m, k, n, false, k, n, n, 1);
  gemm(a.data(), b.data(), c4.data(), m, k, n, false, k, n, n, 4);
  CHECK(c1 == c4);
}
