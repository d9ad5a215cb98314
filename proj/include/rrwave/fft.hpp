#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <vector>

namespace rrwave {

// In-order DFT, any length (mixed-radix Cooley-Tukey, naive for prime sizes).
std::vector<std::complex<double>> fft(std::span<const std::complex<double>> x);
std::vector<std::complex<double>> fft_real(std::span<const double> x);

// One-sided power spectrum of a real signal, bins 0..n/2.
// Normalized so that the bins sum to the mean-square of the signal
// (interior bins are doubled), which makes Parseval checks exact sums.
std::vector<double> power_spectrum(std::span<const double> x);

}  // namespace rrwave
