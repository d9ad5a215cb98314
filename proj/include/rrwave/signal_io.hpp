#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rrwave/errors.hpp"
#include "rrwave/tensor.hpp"

namespace rrwave {

constexpr double kCanonicalRateHz = 50.0;

// One subject's raw PPG series plus its reference respiratory-rate series.
struct PpgRecord {
  std::string subject_id;
  double fs_raw = 0.0;                             // samples/second, > 0
  std::vector<double> samples;                     // PPG amplitudes
  std::vector<std::pair<double, double>> rr_ref;   // (t_seconds, rr_bpm), t ascending

  double duration_s() const { return static_cast<double>(samples.size()) / fs_raw; }
};

// Fixed-length segment at the canonical rate with its ground-truth label.
struct WindowSample {
  std::string subject_id;
  double start_t = 0.0;
  int w = 16;                    // seconds; one of {16, 32, 64}
  std::vector<double> values;    // exactly 50*w samples
  double label_bpm = 0.0;
};

// Parameters of the synthetic PPG generator used as the test oracle. The
// pulse train carries the three respiratory modulations: baseline intensity
// (RIIV), beat amplitude (RIAV) and instantaneous beat frequency (RIFV).
struct SyntheticSpec {
  double duration_s = 480.0;
  double hr_bpm = 75.0;
  double rr_bpm = 15.0;
  double riiv_depth = 0.15;
  double riav_depth = 0.10;
  double rifv_depth = 0.05;
  double noise_std = 0.0;
  uint64_t seed = 0;
  double fs_hz = kCanonicalRateHz;  // output rate of the generator
  std::string subject_id;           // defaults to "synth-<seed>"

  void validate() const;
};

PpgRecord load_record(const std::string& dir);
// Bare PPG CSV (t_seconds,value) without a reference RR series.
PpgRecord load_ppg_csv(const std::string& path);
PpgRecord resample(const PpgRecord& record, double fs_target);
std::vector<WindowSample> slide_windows(const PpgRecord& record, int w, double stride_s = 2.0,
                                        bool warn_on_drop = true);
// Same slicing without labels (label_bpm = 0); for inference-only paths.
std::vector<WindowSample> slide_windows_unlabeled(const PpgRecord& record, int w,
                                                  double stride_s = 2.0);
PpgRecord synthesize(const SyntheticSpec& spec);

// One synthetic subject assembled from a few constant-RR segments around a
// base rate, so cohorts carry label variety inside each subject.
struct SubjectProfile {
  std::string id;
  double rr_base_bpm = 15.0;
  double rr_jitter_bpm = 1.5;  // segment offsets span +- this value
  double hr_bpm = 75.0;
  double noise_std = 0.02;
  int segments = 3;
  double duration_s = 480.0;
  double fs_hz = kCanonicalRateHz;
  uint64_t seed = 0;
};
PpgRecord synthesize_subject(const SubjectProfile& profile);

int64_t window_count(int64_t n_samples, int w, double stride_s);

// Batched training views over a set of windows.
struct WindowSet {
  std::vector<WindowSample> windows;

  int w() const { return windows.empty() ? 0 : windows.front().w; }
  size_t size() const { return windows.size(); }
  bool empty() const { return windows.empty(); }

  // (B, 50w, 1) inputs and (B, 1) labels for the given window indices.
  std::pair<Tensor, Tensor> batch(std::span<const size_t> idx) const;
  std::pair<Tensor, Tensor> batch_all() const;
};

// Windowed-sample container file ("RRWD"): versioned, CRC-guarded.
struct WindowFileMeta {
  int w = 16;
  double stride_s = 2.0;
  double sqi_threshold = 0.9;
  double flatline_delta = 0.02;
  std::string source;
};

void save_windows(const std::string& path, const WindowFileMeta& meta,
                  std::span<const WindowSample> windows);
std::pair<WindowFileMeta, std::vector<WindowSample>> load_windows(const std::string& path);

}  // namespace rrwave
