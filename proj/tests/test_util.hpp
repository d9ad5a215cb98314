#pragma once

#include <string>
#include <vector>

#include "rrwave/model.hpp"
#include "rrwave/rng.hpp"
#include "rrwave/signal_io.hpp"
#include "rrwave/sqi.hpp"

namespace rrwave::testing {

// Small-filter config: same architecture, cheap enough for unit tests.
inline ModelConfig tiny_model_config(int w = 16, bool plain = false) {
  ModelConfig cfg;
  cfg.w = w;
  cfg.plain = plain;
  cfg.residual_filters = {4, 4, 8, 8, 12, 12, 16, 16};
  cfg.head_dims = {8, 4, 1};
  return cfg;
}

// `count` clean SQI-accepted windows from one synthetic subject.
inline std::vector<WindowSample> synth_windows(double rr_bpm, double hr_bpm, int count,
                                               uint64_t seed, int w = 16,
                                               double noise_std = 0.01) {
  SyntheticSpec spec;
  spec.duration_s = static_cast<double>(w + 2 * (count + 2));
  spec.hr_bpm = hr_bpm;
  spec.rr_bpm = rr_bpm;
  spec.noise_std = noise_std;
  spec.seed = seed;
  spec.subject_id = "s" + std::to_string(seed);
  auto rec = synthesize(spec);
  auto windows = slide_windows(rec, w, 2.0, /*warn_on_drop=*/false);
  std::vector<WindowSample> out;
  for (auto& ws : windows) {
    if (static_cast<int>(out.size()) == count) break;
    if (score(ws).accepted) out.push_back(std::move(ws));
  }
  return out;
}

// Window set spanning several respiratory rates; labels are per-subject RR.
inline WindowSet mixed_window_set(const std::vector<double>& rrs, int per_rr, uint64_t seed,
                                  int w = 16) {
  WindowSet set;
  Rng rng(seed);
  for (size_t i = 0; i < rrs.size(); ++i) {
    const double hr = 60.0 + 8.0 * static_cast<double>(i % 5);
    auto ws = synth_windows(rrs[i], hr, per_rr, mix_seed(seed, i), w);
    for (auto& x : ws) set.windows.push_back(std::move(x));
  }
  return set;
}

}  // namespace rrwave::testing
