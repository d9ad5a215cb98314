#include "rrwave/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <set>
#include <thread>

#include "json.hpp"
#include "rrwave/fft.hpp"
#include "rrwave/rng.hpp"

namespace rrwave {

using nlohmann::json;

double mae(std::span<const double> preds, std::span<const double> truths) {
  require(preds.size() == truths.size(), Err::LengthMismatch,
          "mae over " + std::to_string(preds.size()) + " vs " + std::to_string(truths.size()));
  require(!preds.empty(), Err::Empty, "mae of zero samples");
  double acc = 0.0;
  for (size_t i = 0; i < preds.size(); ++i) acc += std::abs(preds[i] - truths[i]);
  return acc / static_cast<double>(preds.size());
}

double mae_counts(std::span<const double> pred_counts, std::span<const double> truth_counts,
                  double window_s) {
  require(pred_counts.size() == truth_counts.size(), Err::LengthMismatch, "mae_counts");
  require(!pred_counts.empty(), Err::Empty, "mae_counts of zero samples");
  require(window_s > 0.0, Err::Precondition, "window_s must be > 0");
  double acc = 0.0;
  for (size_t i = 0; i < pred_counts.size(); ++i) acc += std::abs(pred_counts[i] - truth_counts[i]);
  return 60.0 * acc / (static_cast<double>(pred_counts.size()) * window_s);
}

std::vector<LosoSplit> loso_splits(const std::vector<std::string>& subjects, uint64_t seed) {
  require(subjects.size() >= 6, Err::TooFewSubjects,
          "leave-one-subject-out with 5 inner folds needs >= 6 subjects, got " +
              std::to_string(subjects.size()));
  std::set<std::string> uniq(subjects.begin(), subjects.end());
  require(uniq.size() == subjects.size(), Err::Precondition, "duplicate subject ids");

  std::vector<LosoSplit> out;
  for (size_t t = 0; t < subjects.size(); ++t) {
    LosoSplit split;
    split.test_id = subjects[t];
    std::vector<std::string> rest;
    for (size_t i = 0; i < subjects.size(); ++i)
      if (i != t) rest.push_back(subjects[i]);
    Rng rng(mix_seed(seed, 0x105a0000ULL + t));
    rng.shuffle(rest);
    for (int fold = 0; fold < 5; ++fold) {
      auto& f = split.folds[static_cast<size_t>(fold)];
      for (size_t i = 0; i < rest.size(); ++i) {
        if (static_cast<int>(i % 5) == fold)
          f.val_ids.push_back(rest[i]);
        else
          f.train_ids.push_back(rest[i]);
      }
      require(!f.val_ids.empty() && !f.train_ids.empty(), Err::TooFewSubjects,
              "degenerate inner fold");
    }
    out.push_back(std::move(split));
  }
  return out;
}

namespace {

WindowSet collect_windows(const Cohort& cohort, const std::vector<std::string>& ids) {
  std::set<std::string> want(ids.begin(), ids.end());
  WindowSet set;
  for (const auto& sw : cohort)
    if (want.count(sw.subject_id))
      for (const auto& w : sw.windows) set.windows.push_back(w);
  return set;
}

}  // namespace

LosoOutcome run_loso(const Cohort& cohort, const ModelConfig& model_cfg,
                     const TrainConfig& train_cfg, const LosoOptions& opts) {
  model_cfg.validate();
  train_cfg.validate();
  std::vector<std::string> ids;
  for (const auto& sw : cohort) {
    require(!sw.windows.empty(), Err::EmptySplit, "subject " + sw.subject_id + " has no windows");
    ids.push_back(sw.subject_id);
  }
  const auto splits = loso_splits(ids, opts.seed);

  struct Task {
    size_t subject;
    int fold;
  };
  std::vector<Task> tasks;
  for (size_t s = 0; s < splits.size(); ++s)
    for (int f = 0; f < 5; ++f) tasks.push_back({s, f});

  std::vector<std::array<double, 5>> fold_maes(splits.size());
  std::vector<std::array<std::vector<double>, 5>> fold_preds(splits.size());

  auto run_task = [&](const Task& task) {
    const auto& split = splits[task.subject];
    const auto& fold = split.folds[static_cast<size_t>(task.fold)];
    // Subject independence: the held-out subject must appear nowhere in the
    // fit data.
    for (const auto& id : fold.train_ids)
      require(id != split.test_id, Err::Precondition, "test subject leaked into train split");
    for (const auto& id : fold.val_ids)
      require(id != split.test_id, Err::Precondition, "test subject leaked into val split");

    WindowSet train = collect_windows(cohort, fold.train_ids);
    WindowSet val = collect_windows(cohort, fold.val_ids);
    WindowSet test = collect_windows(cohort, {split.test_id});

    TrainConfig tc = train_cfg;
    tc.seed = mix_seed(train_cfg.seed, task.subject * 5 + static_cast<size_t>(task.fold));
    FitResult fitted;
    if (opts.pretrained.has_value()) {
      fitted = finetune(*opts.pretrained, train, val, tc, opts.allow_reshape);
    } else {
      Model model = Model::build(model_cfg, mix_seed(tc.seed, 0xb01dULL));
      fitted = fit(model, train, val, tc);
    }
    std::vector<double> preds = predict(fitted.best_model, test);
    std::vector<double> truths;
    for (const auto& w : test.windows) truths.push_back(w.label_bpm);
    fold_maes[task.subject][static_cast<size_t>(task.fold)] = mae(preds, truths);
    fold_preds[task.subject][static_cast<size_t>(task.fold)] = std::move(preds);
  };

  const int jobs = std::max(1, opts.jobs);
  if (jobs == 1) {
    for (const auto& t : tasks) run_task(t);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(jobs));
    for (int j = 0; j < jobs; ++j)
      workers.emplace_back([&, j] {
        try {
          for (size_t i = next++; i < tasks.size(); i = next++) run_task(tasks[i]);
        } catch (...) {
          errors[static_cast<size_t>(j)] = std::current_exception();
        }
      });
    for (auto& w : workers) w.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  LosoOutcome outcome;
  EvalReport& rep = outcome.report;
  rep.window_s = model_cfg.w;
  rep.dataset_tag = opts.dataset_tag;
  rep.seed = opts.seed;
  rep.checkpoint_lineage =
      opts.pretrained.has_value()
          ? (opts.pretrained->meta.source_tag.empty() ? "pretrained" : opts.pretrained->meta.source_tag)
          : "scratch";
  rep.model_config_json = model_cfg.to_json();
  double sum = 0.0;
  for (size_t s = 0; s < splits.size(); ++s) {
    SubjectResult r;
    r.subject_id = splits[s].test_id;
    r.fold_maes = fold_maes[s];
    double m = 0.0;
    for (double v : r.fold_maes) m += v;
    r.mae_bpm = m / 5.0;
    sum += r.mae_bpm;
    rep.subjects.push_back(std::move(r));
  }
  rep.mean_mae_bpm = sum / static_cast<double>(rep.subjects.size());
  double var = 0.0;
  for (const auto& r : rep.subjects) {
    const double d = r.mae_bpm - rep.mean_mae_bpm;
    var += d * d;
  }
  rep.std_mae_bpm = rep.subjects.size() > 1
                        ? std::sqrt(var / static_cast<double>(rep.subjects.size() - 1))
                        : 0.0;

  if (opts.emit_predictions) {
    for (size_t s = 0; s < splits.size(); ++s) {
      const auto& test_windows = collect_windows(cohort, {splits[s].test_id}).windows;
      for (size_t i = 0; i < test_windows.size(); ++i) {
        LosoPrediction p;
        p.subject_id = splits[s].test_id;
        p.start_t = test_windows[i].start_t;
        p.truth_bpm = test_windows[i].label_bpm;
        double m = 0.0;
        for (int f = 0; f < 5; ++f) m += fold_preds[s][static_cast<size_t>(f)][i];
        p.pred_bpm = m / 5.0;
        outcome.predictions.push_back(std::move(p));
      }
    }
  }
  return outcome;
}

std::string EvalReport::to_json() const {
  json subs = json::array();
  for (const auto& r : subjects)
    subs.push_back({{"subject_id", r.subject_id}, {"mae_bpm", r.mae_bpm}, {"fold_maes", r.fold_maes}});
  const json j = {{"schema_version", schema_version},
                  {"window_s", window_s},
                  {"dataset", dataset_tag},
                  {"seed", seed},
                  {"checkpoint_lineage", checkpoint_lineage},
                  {"model_config", json::parse(model_config_json.empty() ? "{}" : model_config_json)},
                  {"subjects", subs},
                  {"aggregate",
                   {{"mean_mae_bpm", mean_mae_bpm},
                    {"std_mae_bpm", std_mae_bpm},
                    {"n_subjects", subjects.size()}}}};
  return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
  EvalReport rep;
  const json j = json::parse(text);
  rep.schema_version = j.at("schema_version").get<int>();
  rep.window_s = j.at("window_s").get<int>();
  rep.dataset_tag = j.value("dataset", "");
  rep.seed = j.value("seed", uint64_t{0});
  rep.checkpoint_lineage = j.value("checkpoint_lineage", "");
  if (j.contains("model_config")) rep.model_config_json = j["model_config"].dump();
  for (const auto& s : j.at("subjects")) {
    SubjectResult r;
    r.subject_id = s.at("subject_id").get<std::string>();
    r.mae_bpm = s.at("mae_bpm").get<double>();
    auto fm = s.at("fold_maes").get<std::vector<double>>();
    require(fm.size() == 5, Err::LengthMismatch, "fold_maes must have 5 entries");
    std::copy(fm.begin(), fm.end(), r.fold_maes.begin());
    rep.subjects.push_back(std::move(r));
  }
  rep.mean_mae_bpm = j.at("aggregate").at("mean_mae_bpm").get<double>();
  rep.std_mae_bpm = j.at("aggregate").at("std_mae_bpm").get<double>();
  return rep;
}

SnrParts snr_parts(std::span<const double> values, double fs) {
  require(!values.empty(), Err::EmptyWindow, "snr of empty window");
  const int64_t n = static_cast<int64_t>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(n);
  std::vector<double> x(values.begin(), values.end());
  for (double& v : x) v -= mean;

  const auto p = power_spectrum(x);
  const int64_t half = n / 2;

  SnrParts parts;
  for (double v : x) parts.total_power += v * v;
  parts.total_power /= static_cast<double>(n);

  // Fundamental search over the plausible pulse band 0.5..3 Hz.
  const int64_t lo = std::max<int64_t>(1, static_cast<int64_t>(std::ceil(0.5 * n / fs)));
  const int64_t hi = std::min<int64_t>(half, static_cast<int64_t>(std::floor(3.0 * n / fs)));
  require(lo <= hi, Err::EmptyWindow, "window too short for the pulse band");
  int64_t peak = lo;
  for (int64_t j = lo; j <= hi; ++j)
    if (p[static_cast<size_t>(j)] > p[static_cast<size_t>(peak)]) peak = j;
  parts.fundamental_bin = static_cast<int>(peak);

  std::set<int64_t> signal_bins;
  for (int64_t j : {peak - 1, peak, peak + 1, 2 * peak - 1, 2 * peak, 2 * peak + 1})
    if (j >= 1 && j <= half) signal_bins.insert(j);

  double total_spec = 0.0;
  for (int64_t j = 0; j <= half; ++j) total_spec += p[static_cast<size_t>(j)];
  for (int64_t j : signal_bins) parts.p_signal += p[static_cast<size_t>(j)];
  parts.p_noise = total_spec - parts.p_signal;

  if (parts.p_noise <= 0.0 || parts.p_signal <= 0.0) {
    parts.snr_db = parts.p_signal > 0.0 ? 60.0 : -40.0;
  } else {
    parts.snr_db = std::clamp(10.0 * std::log10(parts.p_signal / parts.p_noise), -40.0, 60.0);
  }
  return parts;
}

double snr_db(const WindowSample& window) { return snr_parts(window.values).snr_db; }

void EwsRubric::validate() const {
  require(!bands.empty(), Err::InvalidRubric, "rubric needs at least one band");
  double prev = -1.0;
  for (const auto& b : bands) {
    require(b.below > prev, Err::InvalidRubric, "rubric bounds must be strictly increasing");
    require(b.score >= 0 && b.score <= 3, Err::InvalidRubric, "scores must lie in 0..3");
    prev = b.below;
  }
  require(else_score >= 0 && else_score <= 3, Err::InvalidRubric, "scores must lie in 0..3");
  require(bands.front().below > 0.0, Err::InvalidRubric, "first band must cover rr = 0");
}

EwsRubric EwsRubric::standard() {
  EwsRubric r;
  r.bands = {{9.0, 3}, {12.0, 1}, {21.0, 0}, {25.0, 2}};
  r.else_score = 3;
  return r;
}

std::string EwsRubric::to_json() const {
  json bs = json::array();
  for (const auto& b : bands) bs.push_back({{"below", b.below}, {"score", b.score}});
  return json{{"bands", bs}, {"else_score", else_score}}.dump();
}

EwsRubric EwsRubric::from_json(const std::string& text) {
  EwsRubric r;
  try {
    const json j = json::parse(text);
    for (const auto& b : j.at("bands"))
      r.bands.push_back({b.at("below").get<double>(), b.at("score").get<int>()});
    r.else_score = j.at("else_score").get<int>();
  } catch (const json::exception& e) {
    raise(Err::InvalidRubric, std::string("bad rubric JSON: ") + e.what());
  }
  r.validate();
  return r;
}

int ews_score(double rr_bpm, const EwsRubric& rubric) {
  require(rr_bpm >= 0.0, Err::Precondition, "rr must be >= 0");
  for (const auto& b : rubric.bands)
    if (rr_bpm < b.below) return b.score;
  return rubric.else_score;
}

EwsReport ews_report(std::span<const double> truth_bpm, std::span<const double> pred_bpm,
                     const EwsRubric& rubric) {
  require(truth_bpm.size() == pred_bpm.size(), Err::LengthMismatch, "ews_report");
  require(!truth_bpm.empty(), Err::Empty, "ews_report of zero samples");
  rubric.validate();
  EwsReport rep;
  rep.rubric_json = rubric.to_json();
  for (size_t i = 0; i < truth_bpm.size(); ++i) {
    const int t = ews_score(truth_bpm[i], rubric);
    const int p = ews_score(pred_bpm[i], rubric);
    rep.confusion[static_cast<size_t>(t)][static_cast<size_t>(p)] += 1;
  }
  // Macro F1 over classes that occur in truth or prediction.
  double f1_sum = 0.0;
  int f1_classes = 0;
  for (int c = 0; c < 4; ++c) {
    int64_t tp = rep.confusion[static_cast<size_t>(c)][static_cast<size_t>(c)];
    int64_t fp = 0, fn = 0;
    for (int o = 0; o < 4; ++o) {
      if (o == c) continue;
      fp += rep.confusion[static_cast<size_t>(o)][static_cast<size_t>(c)];
      fn += rep.confusion[static_cast<size_t>(c)][static_cast<size_t>(o)];
    }
    if (tp + fp + fn == 0) continue;  // class absent everywhere
    f1_sum += 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    ++f1_classes;
  }
  rep.f1_macro = f1_classes > 0 ? f1_sum / f1_classes : 0.0;

  int64_t pos_truth = 0, miss = 0, zero_truth = 0, alarm = 0;
  for (size_t i = 0; i < truth_bpm.size(); ++i) {
    const int t = ews_score(truth_bpm[i], rubric);
    const int p = ews_score(pred_bpm[i], rubric);
    if (t > 0) {
      ++pos_truth;
      if (p == 0) ++miss;
    } else {
      ++zero_truth;
      if (p > 0) ++alarm;
    }
  }
  rep.fnr = pos_truth > 0 ? static_cast<double>(miss) / static_cast<double>(pos_truth) : 0.0;
  rep.fpr = zero_truth > 0 ? static_cast<double>(alarm) / static_cast<double>(zero_truth) : 0.0;
  return rep;
}

std::string EwsReport::to_json() const {
  json conf = json::array();
  for (const auto& row : confusion) conf.push_back(row);
  const json j = {{"confusion", conf},
                  {"f1_macro", f1_macro},
                  {"fnr", fnr},
                  {"fpr", fpr},
                  {"rubric", json::parse(rubric_json.empty() ? "{}" : rubric_json)}};
  return j.dump(2);
}

std::array<double, 3> quartiles(std::vector<double> values) {
  require(!values.empty(), Err::Empty, "quartiles of zero samples");
  std::sort(values.begin(), values.end());
  auto q = [&](double f) {
    const double pos = f * static_cast<double>(values.size() - 1);
    const size_t lo = static_cast<size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    if (lo + 1 >= values.size()) return values.back();
    return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
  };
  return {q(0.25), q(0.5), q(0.75)};
}

}  // namespace rrwave
