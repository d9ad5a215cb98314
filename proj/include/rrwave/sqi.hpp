#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rrwave/signal_io.hpp"

namespace rrwave {

struct SqiConfig {
  double flatline_delta = 0.02;   // per-step amplitude change counted as flat
  int flatline_run = 30;          // minimum consecutive flat points
  double threshold = 0.9;         // acceptance gate on K * F1
  double fs = kCanonicalRateHz;
};

struct SqiReport {
  double k = 0.0;
  double f1 = 0.0;
  double sqi = 0.0;  // k * f1 exactly
  std::vector<int64_t> peaks_a;
  std::vector<int64_t> peaks_b;
  bool accepted = false;
};

// Fraction of points outside flatline runs: a run is >= `flatline_run`
// consecutive points whose successive absolute differences all stay below
// `flatline_delta`.
double flatline_fraction(std::span<const double> values, double delta = 0.02, int min_run = 30);

// Detector A: local maxima gated by prominence (0.3 x window IQR) with a
// minimum separation of 0.3 s.
std::vector<int64_t> detect_peaks_a(std::span<const double> values, double fs = kCanonicalRateHz);

// Detector B: slope-sum transform (0.26 s accumulation) with an adaptive
// threshold (0.6 x running mean of recent slope-sum peaks), refined to the
// local maximum of the raw signal.
std::vector<int64_t> detect_peaks_b(std::span<const double> values, double fs = kCanonicalRateHz);

// Greedy earliest-first one-to-one matching; a pair is coincident when the
// two peaks are less than 150 ms apart. F1 of two empty lists is 1.
double peak_agreement_f1(std::span<const int64_t> peaks_a, std::span<const int64_t> peaks_b,
                         double fs = kCanonicalRateHz);

SqiReport score(const WindowSample& window, const SqiConfig& cfg = {});
SqiReport score_values(std::span<const double> values, const SqiConfig& cfg = {});

}  // namespace rrwave
