#include "rrwave/fft.hpp"

#include <cmath>
#include <numbers>

namespace rrwave {

namespace {

using cd = std::complex<double>;

int64_t smallest_factor(int64_t n) {
  for (int64_t p = 2; p * p <= n; ++p)
    if (n % p == 0) return p;
  return n;
}

std::vector<cd> dft_naive(const std::vector<cd>& x) {
  const int64_t n = static_cast<int64_t>(x.size());
  std::vector<cd> out(n);
  const double w = -2.0 * std::numbers::pi / static_cast<double>(n);
  for (int64_t j = 0; j < n; ++j) {
    cd acc = 0;
    for (int64_t t = 0; t < n; ++t) acc += x[t] * std::polar(1.0, w * ((j * t) % n));
    out[j] = acc;
  }
  return out;
}

// Recursive Cooley-Tukey over the smallest prime factor p: n = p * m.
std::vector<cd> fft_rec(const std::vector<cd>& x) {
  const int64_t n = static_cast<int64_t>(x.size());
  if (n <= 1) return x;
  const int64_t p = smallest_factor(n);
  if (p == n) return dft_naive(x);
  const int64_t m = n / p;

  std::vector<std::vector<cd>> sub(p);
  for (int64_t r = 0; r < p; ++r) {
    sub[r].resize(m);
    for (int64_t t = 0; t < m; ++t) sub[r][t] = x[t * p + r];
    sub[r] = fft_rec(sub[r]);
  }

  const double w = -2.0 * std::numbers::pi / static_cast<double>(n);
  std::vector<cd> out(n);
  for (int64_t q = 0; q < p; ++q) {
    for (int64_t j = 0; j < m; ++j) {
      cd acc = 0;
      for (int64_t r = 0; r < p; ++r) {
        const int64_t k = q * m + j;
        acc += sub[r][j] * std::polar(1.0, w * ((k * r) % n));
      }
      out[q * m + j] = acc;
    }
  }
  return out;
}

}  // namespace

std::vector<cd> fft(std::span<const cd> x) {
  return fft_rec(std::vector<cd>(x.begin(), x.end()));
}

std::vector<cd> fft_real(std::span<const double> x) {
  std::vector<cd> cx(x.size());
  for (size_t i = 0; i < x.size(); ++i) cx[i] = x[i];
  return fft_rec(cx);
}

std::vector<double> power_spectrum(std::span<const double> x) {
  const auto spec = fft_real(x);
  const int64_t n = static_cast<int64_t>(x.size());
  const int64_t half = n / 2;
  std::vector<double> p(half + 1, 0.0);
  const double inv_n2 = 1.0 / (static_cast<double>(n) * static_cast<double>(n));
  for (int64_t j = 0; j <= half; ++j) {
    const double mag2 = std::norm(spec[j]) * inv_n2;
    const bool interior = j != 0 && !(n % 2 == 0 && j == half);
    p[j] = interior ? 2.0 * mag2 : mag2;
  }
  return p;
}

}  // namespace rrwave
