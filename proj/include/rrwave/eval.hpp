#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rrwave/model.hpp"
#include "rrwave/signal_io.hpp"
#include "rrwave/train.hpp"

namespace rrwave {

// Mean absolute error in BPM over paired predictions/truths.
double mae(std::span<const double> preds, std::span<const double> truths);

// Literal per-window breath-count form: 60/(n*W) * sum |delta_count|.
double mae_counts(std::span<const double> pred_counts, std::span<const double> truth_counts,
                  double window_s);

struct LosoFold {
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
};

struct LosoSplit {
  std::string test_id;
  std::array<LosoFold, 5> folds;
};

// Leave-one-subject-out outer loop with an inner subject-level 5-fold 4:1
// partition of the remaining subjects; deterministic in (subjects, seed).
std::vector<LosoSplit> loso_splits(const std::vector<std::string>& subjects, uint64_t seed);

struct SubjectWindows {
  std::string subject_id;
  std::vector<WindowSample> windows;
};
using Cohort = std::vector<SubjectWindows>;

struct SubjectResult {
  std::string subject_id;
  double mae_bpm = 0.0;  // mean of the five fold MAEs
  std::array<double, 5> fold_maes{};
};

struct EvalReport {
  int schema_version = 1;
  int window_s = 16;
  std::string dataset_tag;
  uint64_t seed = 0;
  std::string checkpoint_lineage;  // "scratch" or the pretrained source
  std::string model_config_json;
  std::vector<SubjectResult> subjects;
  double mean_mae_bpm = 0.0;
  double std_mae_bpm = 0.0;  // sample standard deviation across subjects

  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
};

struct LosoOptions {
  uint64_t seed = 0;
  int jobs = 1;
  std::string dataset_tag;
  std::optional<Model> pretrained;  // finetune pathway when present
  bool allow_reshape = false;
  bool emit_predictions = false;
};

struct LosoPrediction {
  std::string subject_id;
  double start_t = 0.0;
  double truth_bpm = 0.0;
  double pred_bpm = 0.0;  // mean over the five fold models
};

struct LosoOutcome {
  EvalReport report;
  std::vector<LosoPrediction> predictions;  // filled when emit_predictions
};

LosoOutcome run_loso(const Cohort& cohort, const ModelConfig& model_cfg,
                     const TrainConfig& train_cfg, const LosoOptions& opts);

// Spectral SNR: power at the pulse fundamental and its first harmonic
// (each with +-1 guard bins) against everything else, in dB, clamped to
// [-40, +60].
struct SnrParts {
  double p_signal = 0.0;
  double p_noise = 0.0;
  double total_power = 0.0;  // mean-square of the mean-removed window
  int fundamental_bin = 0;
  double snr_db = 0.0;
};
SnrParts snr_parts(std::span<const double> values, double fs = kCanonicalRateHz);
double snr_db(const WindowSample& window);

// Early-warning-score rubric: right-open bands over rr >= 0.
struct EwsRubric {
  struct Band {
    double below = 0.0;  // applies to rr < below
    int score = 0;
  };
  std::vector<Band> bands;  // strictly increasing `below`
  int else_score = 0;       // rr >= last band bound

  void validate() const;
  static EwsRubric standard();
  std::string to_json() const;
  static EwsRubric from_json(const std::string& text);
};

int ews_score(double rr_bpm, const EwsRubric& rubric);

struct EwsReport {
  std::array<std::array<int64_t, 4>, 4> confusion{};  // [truth][pred]
  double f1_macro = 0.0;
  double fnr = 0.0;  // truth-score > 0 predicted as 0
  double fpr = 0.0;  // truth-score 0 predicted as > 0
  std::string rubric_json;

  std::string to_json() const;
};

EwsReport ews_report(std::span<const double> truth_bpm, std::span<const double> pred_bpm,
                     const EwsRubric& rubric);

// Quartiles (q1, median, q3) for box-plot style summaries.
std::array<double, 3> quartiles(std::vector<double> values);

}  // namespace rrwave
