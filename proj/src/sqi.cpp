#include "rrwave/sqi.hpp"

#include <algorithm>
#include <cmath>

#include "rrwave/errors.hpp"

namespace rrwave {

namespace {

double quantile_sorted(const std::vector<double>& sorted, double q) {
  const size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double pos = q * static_cast<double>(n - 1);
  const size_t lo = static_cast<size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= n) return sorted[n - 1];
  return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
}

// Plateau-aware strict local maxima; returns the leftmost index of each.
std::vector<int64_t> local_maxima(std::span<const double> x) {
  std::vector<int64_t> out;
  const int64_t n = static_cast<int64_t>(x.size());
  int64_t i = 1;
  while (i < n - 1) {
    if (x[static_cast<size_t>(i)] > x[static_cast<size_t>(i - 1)]) {
      int64_t j = i;
      while (j < n - 1 && x[static_cast<size_t>(j + 1)] == x[static_cast<size_t>(i)]) ++j;
      if (j < n - 1 && x[static_cast<size_t>(j + 1)] < x[static_cast<size_t>(i)]) out.push_back(i);
      i = j + 1;
    } else {
      ++i;
    }
  }
  return out;
}

double prominence_at(std::span<const double> x, int64_t peak) {
  const int64_t n = static_cast<int64_t>(x.size());
  const double h = x[static_cast<size_t>(peak)];
  double left_min = h, right_min = h;
  for (int64_t i = peak - 1; i >= 0; --i) {
    const double v = x[static_cast<size_t>(i)];
    if (v > h) break;
    left_min = std::min(left_min, v);
  }
  for (int64_t i = peak + 1; i < n; ++i) {
    const double v = x[static_cast<size_t>(i)];
    if (v > h) break;
    right_min = std::min(right_min, v);
  }
  return h - std::max(left_min, right_min);
}

// Highest-first greedy separation filter; result sorted ascending.
std::vector<int64_t> enforce_separation(std::span<const double> x, std::vector<int64_t> peaks,
                                        int64_t min_dist) {
  std::sort(peaks.begin(), peaks.end(), [&](int64_t a, int64_t b) {
    const double xa = x[static_cast<size_t>(a)], xb = x[static_cast<size_t>(b)];
    return xa != xb ? xa > xb : a < b;
  });
  std::vector<int64_t> kept;
  for (int64_t p : peaks) {
    bool ok = true;
    for (int64_t q : kept)
      if (std::llabs(p - q) < min_dist) {
        ok = false;
        break;
      }
    if (ok) kept.push_back(p);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

}  // namespace

double flatline_fraction(std::span<const double> values, double delta, int min_run) {
  const int64_t n = static_cast<int64_t>(values.size());
  require(n > 0, Err::EmptyWindow, "flatline_fraction of empty window");
  if (n == 1) return 1.0;
  std::vector<char> flat(static_cast<size_t>(n), 0);
  int64_t run_start = 0;  // start of the current chain of small diffs
  for (int64_t i = 1; i <= n; ++i) {
    const bool small =
        i < n && std::abs(values[static_cast<size_t>(i)] - values[static_cast<size_t>(i - 1)]) < delta;
    if (!small) {
      const int64_t run_points = i - run_start;  // points run_start .. i-1
      if (run_points >= min_run)
        for (int64_t j = run_start; j < i; ++j) flat[static_cast<size_t>(j)] = 1;
      run_start = i;
    }
  }
  int64_t nonflat = 0;
  for (char f : flat) nonflat += f ? 0 : 1;
  return static_cast<double>(nonflat) / static_cast<double>(n);
}

std::vector<int64_t> detect_peaks_a(std::span<const double> values, double fs) {
  require(!values.empty(), Err::EmptyWindow, "detect_peaks_a of empty window");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
  if (iqr <= 0.0) return {};
  const double min_prom = 0.3 * iqr;

  std::vector<int64_t> cands;
  for (int64_t p : local_maxima(values))
    if (prominence_at(values, p) >= min_prom) cands.push_back(p);
  return enforce_separation(values, std::move(cands), std::llround(0.3 * fs));
}

std::vector<int64_t> detect_peaks_b(std::span<const double> values, double fs) {
  require(!values.empty(), Err::EmptyWindow, "detect_peaks_b of empty window");
  const int64_t n = static_cast<int64_t>(values.size());
  const int64_t w = std::max<int64_t>(1, std::llround(0.26 * fs));

  // Slope-sum function: windowed sum of positive first differences.
  std::vector<double> ssf(static_cast<size_t>(n), 0.0);
  double acc = 0.0;
  for (int64_t i = 1; i < n; ++i) {
    acc += std::max(0.0, values[static_cast<size_t>(i)] - values[static_cast<size_t>(i - 1)]);
    const int64_t drop = i - w;
    if (drop >= 1)
      acc -= std::max(0.0, values[static_cast<size_t>(drop)] - values[static_cast<size_t>(drop - 1)]);
    ssf[static_cast<size_t>(i)] = acc;
  }

  const auto ssf_peaks = local_maxima(ssf);
  if (ssf_peaks.empty()) return {};

  // Seed the adaptive threshold from the first 3 seconds (fallback: whole window).
  const int64_t warm = std::min<int64_t>(n, std::llround(3.0 * fs));
  double warm_max = 0.0;
  for (int64_t i = 0; i < warm; ++i) warm_max = std::max(warm_max, ssf[static_cast<size_t>(i)]);
  if (warm_max <= 0.0)
    for (double v : ssf) warm_max = std::max(warm_max, v);
  if (warm_max <= 0.0) return {};

  std::vector<double> recent = {warm_max};
  auto threshold = [&recent]() {
    double s = 0.0;
    for (double v : recent) s += v;
    return 0.6 * s / static_cast<double>(recent.size());
  };

  const int64_t min_dist = std::llround(0.3 * fs);
  std::vector<int64_t> peaks;
  for (int64_t sp : ssf_peaks) {
    const double h = ssf[static_cast<size_t>(sp)];
    if (h <= 0.0 || h < threshold()) continue;
    recent.push_back(h);
    if (recent.size() > 5) recent.erase(recent.begin());
    // Refine to the raw-signal local maximum around the slope-sum onset.
    const int64_t lo = std::max<int64_t>(0, sp - w);
    const int64_t hi = std::min<int64_t>(n - 1, sp + w);
    int64_t best = lo;
    for (int64_t i = lo + 1; i <= hi; ++i)
      if (values[static_cast<size_t>(i)] > values[static_cast<size_t>(best)]) best = i;
    if (!peaks.empty() && best - peaks.back() < min_dist) {
      if (values[static_cast<size_t>(best)] > values[static_cast<size_t>(peaks.back())])
        peaks.back() = best;
      continue;
    }
    peaks.push_back(best);
  }
  return peaks;
}

double peak_agreement_f1(std::span<const int64_t> peaks_a, std::span<const int64_t> peaks_b,
                         double fs) {
  if (peaks_a.empty() && peaks_b.empty()) return 1.0;
  const double tol = 0.150;
  size_t i = 0, j = 0, matches = 0;
  while (i < peaks_a.size() && j < peaks_b.size()) {
    const double ta = static_cast<double>(peaks_a[i]) / fs;
    const double tb = static_cast<double>(peaks_b[j]) / fs;
    if (std::abs(ta - tb) < tol) {
      ++matches;
      ++i;
      ++j;
    } else if (ta < tb) {
      ++i;
    } else {
      ++j;
    }
  }
  return 2.0 * static_cast<double>(matches) /
         static_cast<double>(peaks_a.size() + peaks_b.size());
}

SqiReport score_values(std::span<const double> values, const SqiConfig& cfg) {
  require(!values.empty(), Err::EmptyWindow, "score of empty window");
  SqiReport r;
  r.k = flatline_fraction(values, cfg.flatline_delta, cfg.flatline_run);
  r.peaks_a = detect_peaks_a(values, cfg.fs);
  r.peaks_b = detect_peaks_b(values, cfg.fs);
  r.f1 = peak_agreement_f1(r.peaks_a, r.peaks_b, cfg.fs);
  r.sqi = r.k * r.f1;
  r.accepted = r.sqi >= cfg.threshold;
  return r;
}

SqiReport score(const WindowSample& window, const SqiConfig& cfg) {
  return score_values(window.values, cfg);
}

}  // namespace rrwave
