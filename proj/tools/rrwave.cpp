// rrwave: PPG respiratory-rate estimation pipeline.
//
// Subcommands: synth, preprocess, train, finetune, evaluate, predict, snr,
// ews. Exit codes: 0 success, 1 validation error (flags, files, formats),
// 2 runtime failure. Diagnostics go to stderr; machine output to files.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rrwave/binio.hpp"
#include "rrwave/errors.hpp"
#include "rrwave/eval.hpp"
#include "rrwave/manifest.hpp"
#include "rrwave/model.hpp"
#include "rrwave/rng.hpp"
#include "rrwave/signal_io.hpp"
#include "rrwave/sqi.hpp"
#include "rrwave/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rrwave;

namespace {

int exit_code_for(Err code) {
  switch (code) {
    case Err::NonFiniteLoss:
    case Err::NonFiniteActivation:
    case Err::DisconnectedGraph:
    case Err::Precondition:
      return 2;
    default:
      return 1;
  }
}

uint64_t resolve_seed(int64_t flag_seed) {
  if (flag_seed >= 0) return static_cast<uint64_t>(flag_seed);
  if (const char* env = std::getenv("RRWAVE_SEED")) return std::strtoull(env, nullptr, 10);
  return 0;
}

std::pair<double, double> parse_range(const std::string& text, const char* what) {
  const auto pos = text.find("..");
  require(pos != std::string::npos, Err::InvalidConfig,
          std::string(what) + " must look like lo..hi, got '" + text + "'");
  try {
    const double lo = std::stod(text.substr(0, pos));
    const double hi = std::stod(text.substr(pos + 2));
    require(lo <= hi, Err::InvalidConfig, std::string(what) + ": lo > hi");
    return {lo, hi};
  } catch (const std::logic_error&) {
    raise(Err::InvalidConfig, std::string(what) + ": bad number in '" + text + "'");
  }
}

std::vector<fs::path> subject_dirs(const std::string& data_dir) {
  require(fs::is_directory(data_dir), Err::MissingFile, data_dir + " is not a directory");
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(data_dir))
    if (entry.is_directory() && fs::exists(entry.path() / "ppg.csv")) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  require(!dirs.empty(), Err::MissingFile, data_dir + " holds no subject directories with ppg.csv");
  return dirs;
}

struct AuditRow {
  std::string subject;
  double start_t;
  SqiReport sqi;
};

void write_audit_csv(const std::string& path, const std::vector<AuditRow>& rows) {
  std::string text = "subject,start_t,k,f1,sqi,accepted\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.10g,%.10g,%.10g,%d\n", r.subject.c_str(), r.start_t,
                  r.sqi.k, r.sqi.f1, r.sqi.sqi, r.sqi.accepted ? 1 : 0);
    text += buf;
  }
  write_file_atomic(path, text);
}

Cohort load_cohort(const std::string& data_dir, int window_s, double stride, const SqiConfig& sqi,
                   bool apply_sqi, std::vector<AuditRow>* audit) {
  Cohort cohort;
  for (const auto& dir : subject_dirs(data_dir)) {
    PpgRecord rec = load_record(dir.string());
    rec = resample(rec, kCanonicalRateHz);
    auto windows = slide_windows(rec, window_s, stride);
    SubjectWindows sw;
    sw.subject_id = rec.subject_id;
    for (auto& w : windows) {
      const SqiReport rep = score(w, sqi);
      if (audit) audit->push_back({w.subject_id, w.start_t, rep});
      if (!apply_sqi || rep.accepted) sw.windows.push_back(std::move(w));
    }
    if (sw.windows.empty()) {
      std::fprintf(stderr, "[rrwave] warning: subject %s has no accepted windows\n",
                   sw.subject_id.c_str());
      continue;
    }
    cohort.push_back(std::move(sw));
  }
  return cohort;
}

// Stratified subject profile: base RRs cover the requested range across the
// cohort, with per-subject HR and noise draws.
SubjectProfile make_profile(const std::string& id, size_t index, size_t total, Rng& rng,
                            double rr_lo, double rr_hi, double hr_lo, double hr_hi,
                            double duration_s, int segments, double noise, double fs) {
  SubjectProfile p;
  p.id = id;
  const double slot =
      (static_cast<double>(index) + rng.uniform(0.2, 0.8)) / static_cast<double>(total);
  p.rr_base_bpm = rr_lo + (rr_hi - rr_lo) * slot;
  p.hr_bpm = rng.uniform(hr_lo, hr_hi);
  p.noise_std = noise * rng.uniform(0.5, 1.5);
  p.segments = segments;
  p.duration_s = duration_s;
  p.fs_hz = fs;
  p.seed = rng.next_u64();
  return p;
}

void write_record_csvs(const fs::path& dir, const PpgRecord& rec) {
  fs::create_directories(dir);
  std::string ppg = "t_seconds,value\n";
  char buf[96];
  for (size_t i = 0; i < rec.samples.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.8g\n", static_cast<double>(i) / rec.fs_raw,
                  rec.samples[i]);
    ppg += buf;
  }
  write_file_atomic((dir / "ppg.csv").string(), ppg);
  std::string rr = "t_seconds,rr_bpm\n";
  for (const auto& [t, v] : rec.rr_ref) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.8g\n", t, v);
    rr += buf;
  }
  write_file_atomic((dir / "rr.csv").string(), rr);
}

// Subject-level validation split (window-level only when one subject).
std::pair<WindowSet, WindowSet> split_train_val(std::vector<WindowSample> windows, double val_frac,
                                                uint64_t seed) {
  std::set<std::string> subject_set;
  for (const auto& w : windows) subject_set.insert(w.subject_id);
  std::vector<std::string> subjects(subject_set.begin(), subject_set.end());

  WindowSet train, val;
  if (subjects.size() >= 2) {
    Rng rng(mix_seed(seed, 0x5b11aULL));
    rng.shuffle(subjects);
    const size_t n_val = std::max<size_t>(
        1, static_cast<size_t>(std::llround(val_frac * static_cast<double>(subjects.size()))));
    std::set<std::string> val_ids(
        subjects.begin(), subjects.begin() + static_cast<long>(std::min(n_val, subjects.size() - 1)));
    for (auto& w : windows)
      (val_ids.count(w.subject_id) ? val : train).windows.push_back(std::move(w));
  } else {
    std::fprintf(stderr,
                 "[rrwave] warning: single subject; falling back to a window-level split\n");
    Rng rng(mix_seed(seed, 0x5b11aULL));
    std::vector<size_t> order(windows.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    const size_t n_val = std::max<size_t>(
        1, static_cast<size_t>(std::llround(val_frac * static_cast<double>(order.size()))));
    std::set<size_t> val_idx(order.begin(), order.begin() + static_cast<long>(n_val));
    for (size_t i = 0; i < windows.size(); ++i)
      (val_idx.count(i) ? val : train).windows.push_back(std::move(windows[i]));
  }
  require(!train.empty() && !val.empty(), Err::EmptySplit, "could not form a train/val split");
  return {train, val};
}

struct CommonTrainFlags {
  std::string windows_path;
  std::string config_path;
  std::string model_config_path;
  std::string out_path;
  std::string log_path;
  int window_s = 0;
  bool plain = false;
  double val_frac = 0.2;
  int64_t seed = -1;
  double lr = -1.0;
  int max_epochs = -1;
  int batch_size = -1;
};

TrainConfig make_train_config(const CommonTrainFlags& f, uint64_t seed) {
  TrainConfig tc;
  if (!f.config_path.empty()) {
    const auto bytes = read_file_bytes(f.config_path);
    tc = TrainConfig::from_json(std::string(bytes.begin(), bytes.end()));
  }
  if (f.lr >= 0) tc.lr = f.lr;
  if (f.max_epochs >= 0) tc.max_epochs = f.max_epochs;
  if (f.batch_size >= 1) tc.batch_size = f.batch_size;
  tc.seed = seed;
  tc.validate();
  return tc;
}

ModelConfig make_model_config(const std::string& path, int window_s, bool plain) {
  ModelConfig mc;
  if (!path.empty()) {
    const auto bytes = read_file_bytes(path);
    mc = ModelConfig::from_json(std::string(bytes.begin(), bytes.end()));
  }
  if (window_s > 0) mc.w = window_s;
  if (plain) mc.plain = true;
  mc.validate();
  return mc;
}

int cmd_synth(const std::string& out_dir, int subjects, const std::string& rr_range,
              const std::string& hr_range, double duration, int segments, double noise, double fs,
              int64_t seed_flag) {
  const auto [rr_lo, rr_hi] = parse_range(rr_range, "--rr");
  const auto [hr_lo, hr_hi] = parse_range(hr_range, "--hr");
  require(subjects >= 1, Err::InvalidConfig, "--subjects must be >= 1");
  require(segments >= 1, Err::InvalidConfig, "--segments must be >= 1");
  const uint64_t seed = resolve_seed(seed_flag);
  Rng rng(mix_seed(seed, 0x57a9eULL));
  for (int i = 0; i < subjects; ++i) {
    char name[16];
    std::snprintf(name, sizeof(name), "s%02d", i + 1);
    Rng sub = rng.fork(static_cast<uint64_t>(i));
    const SubjectProfile profile =
        make_profile(name, static_cast<size_t>(i), static_cast<size_t>(subjects), sub, rr_lo,
                     rr_hi, hr_lo, hr_hi, duration, segments, noise, fs);
    write_record_csvs(fs::path(out_dir) / name, synthesize_subject(profile));
  }
  RunManifest man;
  man.subcommand = "synth";
  man.seed = seed;
  man.config_json = json{{"subjects", subjects},   {"rr", rr_range},       {"hr", hr_range},
                         {"duration_s", duration}, {"segments", segments}, {"noise", noise},
                         {"fs", fs},               {"out", out_dir}}
                        .dump();
  man.write((fs::path(out_dir) / "manifest.json").string());
  std::fprintf(stderr, "[rrwave] wrote %d synthetic subject(s) under %s\n", subjects,
               out_dir.c_str());
  return 0;
}

int cmd_preprocess(const std::string& data_dir, int window_s, double stride, double sqi_threshold,
                   double flatline_delta, const std::string& out_path, std::string audit_path,
                   int64_t seed_flag) {
  SqiConfig sqi;
  sqi.threshold = sqi_threshold;
  sqi.flatline_delta = flatline_delta;
  std::vector<AuditRow> audit;
  Cohort cohort = load_cohort(data_dir, window_s, stride, sqi, /*apply_sqi=*/true, &audit);

  std::vector<WindowSample> windows;
  for (auto& sw : cohort)
    for (auto& w : sw.windows) windows.push_back(std::move(w));
  WindowFileMeta meta;
  meta.w = window_s;
  meta.stride_s = stride;
  meta.sqi_threshold = sqi_threshold;
  meta.flatline_delta = flatline_delta;
  meta.source = data_dir;
  save_windows(out_path, meta, windows);
  if (audit_path.empty()) audit_path = out_path + ".sqi.csv";
  write_audit_csv(audit_path, audit);

  RunManifest man;
  man.subcommand = "preprocess";
  man.seed = resolve_seed(seed_flag);
  man.config_json = json{{"data_dir", data_dir},
                         {"window", window_s},
                         {"stride", stride},
                         {"sqi_threshold", sqi_threshold},
                         {"flatline_delta", flatline_delta},
                         {"out", out_path},
                         {"audit", audit_path}}
                        .dump();
  for (const auto& dir : subject_dirs(data_dir)) {
    man.add_input((dir / "ppg.csv").string());
    man.add_input((dir / "rr.csv").string());
  }
  man.write(out_path + ".manifest.json");
  std::fprintf(stderr, "[rrwave] kept %zu window(s) across %zu subject(s); audit: %s\n",
               windows.size(), cohort.size(), audit_path.c_str());
  return 0;
}

int cmd_train_or_finetune(const CommonTrainFlags& f, const std::string& from_path,
                          bool reset_bn_stats, bool reshape_head) {
  auto [meta, windows] = load_windows(f.windows_path);
  if (f.window_s > 0)
    require(f.window_s == meta.w, Err::ConfigMismatch,
            "--window " + std::to_string(f.window_s) + " but windows file holds W=" +
                std::to_string(meta.w));
  const uint64_t seed = resolve_seed(f.seed);
  TrainConfig tc = make_train_config(f, seed);
  tc.reset_bn_stats = reset_bn_stats;
  auto [train_set, val_set] = split_train_val(std::move(windows), f.val_frac, seed);

  FitResult res;
  if (from_path.empty()) {
    ModelConfig mc = make_model_config(f.model_config_path, meta.w, f.plain);
    Model model = Model::build(mc, mix_seed(seed, 0xb01dULL));
    model.meta.source_tag = fs::path(f.windows_path).filename().string();
    res = fit(model, train_set, val_set, tc);
  } else {
    Model pre = Model::load(from_path);
    if (f.plain && !pre.config.plain)
      raise(Err::ConflictingFlags, "--plain requested but " + from_path + " is not a plain model");
    pre.meta.source_tag +=
        (pre.meta.source_tag.empty() ? "" : "->") + fs::path(f.windows_path).filename().string();
    res = finetune(pre, train_set, val_set, tc, reshape_head);
  }
  res.best_model.save(f.out_path);
  if (!f.log_path.empty()) save_history_csv(f.log_path, res.history);

  RunManifest man;
  man.subcommand = from_path.empty() ? "train" : "finetune";
  man.seed = seed;
  man.config_json = json{{"windows", f.windows_path},
                         {"from", from_path},
                         {"train_config", json::parse(tc.to_json())},
                         {"model_config", json::parse(res.best_model.config.to_json())},
                         {"val_frac", f.val_frac},
                         {"out", f.out_path},
                         {"log", f.log_path},
                         {"reset_bn_stats", reset_bn_stats},
                         {"reshape_head", reshape_head}}
                        .dump();
  man.add_input(f.windows_path);
  if (!from_path.empty()) man.add_input(from_path);
  man.write(f.out_path + ".manifest.json");
  std::fprintf(stderr, "[rrwave] best epoch %d (val MSE %.6g) after %d epoch(s); saved %s\n",
               res.best_epoch, res.best_val_mse, res.epochs_run, f.out_path.c_str());
  return 0;
}

int cmd_evaluate(const std::string& data_dir, int window_s, double stride, double sqi_threshold,
                 const std::string& pretrained, int jobs, int64_t seed_flag,
                 const CommonTrainFlags& f, const std::string& out_path,
                 const std::string& plots_dir, const std::string& predictions_path,
                 bool reshape_head) {
  SqiConfig sqi;
  sqi.threshold = sqi_threshold;
  Cohort cohort = load_cohort(data_dir, window_s, stride, sqi, /*apply_sqi=*/true, nullptr);
  const uint64_t seed = resolve_seed(seed_flag);
  TrainConfig tc = make_train_config(f, seed);
  ModelConfig mc = make_model_config(f.model_config_path, window_s, f.plain);

  LosoOptions opts;
  opts.seed = seed;
  opts.jobs = jobs;
  opts.dataset_tag = fs::path(data_dir).filename().string();
  opts.allow_reshape = reshape_head;
  opts.emit_predictions = !predictions_path.empty();
  if (!pretrained.empty()) {
    Model pre = Model::load(pretrained);
    if (f.plain && !pre.config.plain)
      raise(Err::ConflictingFlags, "--plain requested but " + pretrained + " is not a plain model");
    opts.pretrained = std::move(pre);
  }

  const LosoOutcome outcome = run_loso(cohort, mc, tc, opts);
  write_file_atomic(out_path, outcome.report.to_json() + "\n");

  if (!predictions_path.empty()) {
    std::string text = "subject,start_t,truth_bpm,pred_bpm\n";
    char buf[160];
    for (const auto& p : outcome.predictions) {
      std::snprintf(buf, sizeof(buf), "%s,%.6f,%.10g,%.10g\n", p.subject_id.c_str(), p.start_t,
                    p.truth_bpm, p.pred_bpm);
      text += buf;
    }
    write_file_atomic(predictions_path, text);
  }

  if (!plots_dir.empty()) {
    // RR distribution histogram (1-BPM bins) plus SNR quartiles.
    std::map<int, int64_t> hist;
    std::vector<double> snrs;
    for (const auto& sw : cohort)
      for (const auto& w : sw.windows) {
        hist[static_cast<int>(std::floor(w.label_bpm))] += 1;
        snrs.push_back(snr_db(w));
      }
    std::string htext = "bin_lo,bin_hi,count\n";
    char buf[96];
    for (const auto& [bin, count] : hist) {
      std::snprintf(buf, sizeof(buf), "%d,%d,%lld\n", bin, bin + 1, static_cast<long long>(count));
      htext += buf;
    }
    write_file_atomic((fs::path(plots_dir) / "rr_hist.csv").string(), htext);
    const auto q = quartiles(snrs);
    std::snprintf(buf, sizeof(buf), "window_s,q1,median,q3,n\n%d,%.6g,%.6g,%.6g,%zu\n", window_s,
                  q[0], q[1], q[2], snrs.size());
    write_file_atomic((fs::path(plots_dir) / "snr_quartiles.csv").string(), std::string(buf));
  }

  RunManifest man;
  man.subcommand = "evaluate";
  man.seed = seed;
  man.config_json = json{{"data_dir", data_dir},
                         {"window", window_s},
                         {"stride", stride},
                         {"sqi_threshold", sqi_threshold},
                         {"pretrained", pretrained},
                         {"jobs", jobs},
                         {"train_config", json::parse(tc.to_json())},
                         {"model_config", json::parse(mc.to_json())},
                         {"out", out_path}}
                        .dump();
  for (const auto& dir : subject_dirs(data_dir)) man.add_input((dir / "ppg.csv").string());
  if (!pretrained.empty()) man.add_input(pretrained);
  man.write(out_path + ".manifest.json");
  std::fprintf(stderr, "[rrwave] evaluate: %zu subjects, aggregate MAE %.4f +- %.4f BPM -> %s\n",
               outcome.report.subjects.size(), outcome.report.mean_mae_bpm,
               outcome.report.std_mae_bpm, out_path.c_str());
  return 0;
}

int cmd_predict(const std::string& model_path, const std::string& ppg_path, int window_s,
                double stride, bool no_sqi, double sqi_threshold, const std::string& out_path,
                int64_t seed_flag) {
  Model model = Model::load(model_path);
  require(model.config.w == window_s, Err::ConfigMismatch,
          "model was trained at W=" + std::to_string(model.config.w) + ", requested W=" +
              std::to_string(window_s));
  PpgRecord rec = load_ppg_csv(ppg_path);
  rec = resample(rec, kCanonicalRateHz);
  auto windows = slide_windows_unlabeled(rec, window_s, stride);

  SqiConfig sqi;
  sqi.threshold = sqi_threshold;
  std::vector<SqiReport> reports;
  WindowSet accepted;
  std::vector<size_t> accepted_rows;
  for (size_t i = 0; i < windows.size(); ++i) {
    reports.push_back(score(windows[i], sqi));
    if (no_sqi || reports.back().accepted) {
      accepted.windows.push_back(windows[i]);
      accepted_rows.push_back(i);
    }
  }
  std::vector<double> preds;
  if (!accepted.empty()) preds = predict(model, accepted);

  std::string text = "start_t,sqi,status,rr_bpm\n";
  char buf[128];
  std::map<size_t, double> pred_by_row;
  for (size_t j = 0; j < accepted_rows.size(); ++j) pred_by_row[accepted_rows[j]] = preds[j];
  for (size_t i = 0; i < windows.size(); ++i) {
    if (pred_by_row.count(i))
      std::snprintf(buf, sizeof(buf), "%.6f,%.10g,ok,%.10g\n", windows[i].start_t, reports[i].sqi,
                    pred_by_row[i]);
    else
      std::snprintf(buf, sizeof(buf), "%.6f,%.10g,rejected,\n", windows[i].start_t,
                    reports[i].sqi);
    text += buf;
  }
  write_file_atomic(out_path, text);

  RunManifest man;
  man.subcommand = "predict";
  man.seed = resolve_seed(seed_flag);
  man.config_json = json{{"model", model_path}, {"ppg", ppg_path},
                         {"window", window_s},  {"stride", stride},
                         {"no_sqi", no_sqi},    {"sqi_threshold", sqi_threshold},
                         {"out", out_path}}
                        .dump();
  man.add_input(model_path);
  man.add_input(ppg_path);
  man.write(out_path + ".manifest.json");
  std::fprintf(stderr, "[rrwave] predict: %zu window(s), %zu accepted -> %s\n", windows.size(),
               accepted_rows.size(), out_path.c_str());
  return 0;
}

int cmd_snr(const std::string& data_dir, int window_s, double stride, bool no_sqi,
            double sqi_threshold, const std::string& out_path, int64_t seed_flag) {
  SqiConfig sqi;
  sqi.threshold = sqi_threshold;
  Cohort cohort = load_cohort(data_dir, window_s, stride, sqi, !no_sqi, nullptr);
  std::string text = "subject,start_t,snr_db\n";
  char buf[128];
  for (const auto& sw : cohort)
    for (const auto& w : sw.windows) {
      std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f\n", w.subject_id.c_str(), w.start_t,
                    snr_db(w));
      text += buf;
    }
  write_file_atomic(out_path, text);

  RunManifest man;
  man.subcommand = "snr";
  man.seed = resolve_seed(seed_flag);
  man.config_json = json{{"data_dir", data_dir},
                         {"window", window_s},
                         {"stride", stride},
                         {"no_sqi", no_sqi},
                         {"sqi_threshold", sqi_threshold},
                         {"out", out_path}}
                        .dump();
  man.write(out_path + ".manifest.json");
  return 0;
}

int cmd_ews(const std::string& report_path, const std::string& rubric_path,
            const std::string& out_path, int64_t seed_flag) {
  EwsRubric rubric = EwsRubric::standard();
  if (!rubric_path.empty()) {
    const auto bytes = read_file_bytes(rubric_path);
    rubric = EwsRubric::from_json(std::string(bytes.begin(), bytes.end()));
  }

  const auto bytes = read_file_bytes(report_path);
  std::string content(bytes.begin(), bytes.end());
  std::vector<double> truths, preds;
  size_t pos = 0, line_no = 0;
  int truth_col = -1, pred_col = -1;
  while (pos < content.size()) {
    size_t eol = content.find('\n', pos);
    if (eol == std::string::npos) eol = content.size();
    std::string line = content.substr(pos, eol - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    pos = eol + 1;
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    size_t at = 0;
    while (true) {
      const size_t comma = line.find(',', at);
      fields.push_back(
          line.substr(at, comma == std::string::npos ? std::string::npos : comma - at));
      if (comma == std::string::npos) break;
      at = comma + 1;
    }
    if (line_no == 1) {
      for (size_t c = 0; c < fields.size(); ++c) {
        if (fields[c] == "truth_bpm") truth_col = static_cast<int>(c);
        if (fields[c] == "pred_bpm") pred_col = static_cast<int>(c);
      }
      require(truth_col >= 0 && pred_col >= 0, Err::MalformedRow,
              report_path + ": header must name truth_bpm and pred_bpm columns");
      continue;
    }
    require(static_cast<int>(fields.size()) > std::max(truth_col, pred_col), Err::MalformedRow,
            report_path + " line " + std::to_string(line_no));
    try {
      truths.push_back(std::stod(fields[static_cast<size_t>(truth_col)]));
      preds.push_back(std::stod(fields[static_cast<size_t>(pred_col)]));
    } catch (const std::logic_error&) {
      raise(Err::MalformedRow, report_path + " line " + std::to_string(line_no));
    }
  }

  const EwsReport rep = ews_report(truths, preds, rubric);
  write_file_atomic(out_path, rep.to_json() + "\n");

  RunManifest man;
  man.subcommand = "ews";
  man.seed = resolve_seed(seed_flag);
  man.config_json =
      json{{"report", report_path}, {"rubric", rubric_path}, {"out", out_path}}.dump();
  man.add_input(report_path);
  if (!rubric_path.empty()) man.add_input(rubric_path);
  man.write(out_path + ".manifest.json");
  std::fprintf(stderr, "[rrwave] ews: %zu pairs, macro-F1 %.4f, FNR %.4f, FPR %.4f -> %s\n",
               truths.size(), rep.f1_macro, rep.fnr, rep.fpr, out_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RRWaveNet PPG respiratory-rate pipeline"};
  app.set_version_flag("--version", std::string("rrwave ") + kToolVersion +
                                        " (checkpoint v1, windows v1, report v1)");
  app.require_subcommand(1);

  int threads = 0;
  app.add_option("--threads", threads, "worker threads (default: hardware)");

  auto* synth = app.add_subcommand("synth", "generate a synthetic PPG cohort");
  std::string sy_out, sy_rr = "8..30", sy_hr = "60..100";
  int sy_subjects = 6, sy_segments = 3;
  double sy_duration = 480.0, sy_noise = 0.03, sy_fs = 50.0;
  int64_t sy_seed = -1;
  synth->add_option("--out", sy_out, "output dataset directory")->required();
  synth->add_option("--subjects", sy_subjects, "number of subjects");
  synth->add_option("--rr", sy_rr, "respiratory-rate range lo..hi (BPM)");
  synth->add_option("--hr", sy_hr, "heart-rate range lo..hi (BPM)");
  synth->add_option("--duration", sy_duration, "seconds per subject");
  synth->add_option("--segments", sy_segments, "RR segments per subject");
  synth->add_option("--noise", sy_noise, "additive Gaussian noise sigma");
  synth->add_option("--fs", sy_fs, "output sampling rate (Hz)");
  synth->add_option("--seed", sy_seed, "seed (default RRWAVE_SEED or 0)");

  auto* prep = app.add_subcommand("preprocess", "resample, window and SQI-gate a dataset");
  std::string pp_data, pp_out, pp_audit;
  int pp_window = 16;
  double pp_stride = 2.0, pp_sqi = 0.9, pp_flat = 0.02;
  int64_t pp_seed = -1;
  prep->add_option("--data-dir", pp_data, "dataset directory")->required();
  prep->add_option("--window", pp_window, "window seconds (16|32|64)")->required();
  prep->add_option("--stride", pp_stride, "stride seconds");
  prep->add_option("--sqi-threshold", pp_sqi, "acceptance threshold on K*F1");
  prep->add_option("--flatline-delta", pp_flat, "flatline step threshold");
  prep->add_option("--out", pp_out, "windows container path")->required();
  prep->add_option("--audit", pp_audit, "per-window SQI audit CSV (default <out>.sqi.csv)");
  prep->add_option("--seed", pp_seed, "seed recorded in the manifest");

  auto add_train_flags = [](CLI::App* cmd, CommonTrainFlags& f) {
    cmd->add_option("--windows", f.windows_path, "windows container")->required();
    cmd->add_option("--window", f.window_s, "window seconds (cross-checked)");
    cmd->add_option("--config", f.config_path, "train config JSON");
    cmd->add_option("--model-config", f.model_config_path, "model config JSON");
    cmd->add_flag("--plain", f.plain, "single-path variant without the multi-scale module");
    cmd->add_option("--out", f.out_path, "checkpoint output")->required();
    cmd->add_option("--log", f.log_path, "history CSV output");
    cmd->add_option("--val-frac", f.val_frac, "validation fraction (subject level)");
    cmd->add_option("--seed", f.seed, "seed (default RRWAVE_SEED or 0)");
    cmd->add_option("--lr", f.lr, "learning-rate override");
    cmd->add_option("--max-epochs", f.max_epochs, "epoch cap override");
    cmd->add_option("--batch-size", f.batch_size, "batch size override");
  };
  auto* train_cmd = app.add_subcommand("train", "train from scratch on a windows container");
  CommonTrainFlags tr_flags;
  add_train_flags(train_cmd, tr_flags);

  auto* ft_cmd = app.add_subcommand("finetune", "fine-tune from a pretrained checkpoint");
  CommonTrainFlags ft_flags;
  std::string ft_from;
  bool ft_reset_bn = false, ft_reshape = false;
  add_train_flags(ft_cmd, ft_flags);
  ft_cmd->add_option("--from", ft_from, "pretrained checkpoint")->required();
  ft_cmd->add_flag("--reset-bn-stats", ft_reset_bn, "restart batch-norm running statistics");
  ft_cmd->add_flag("--reshape-head", ft_reshape, "accept a checkpoint trained at another W");

  auto* ev = app.add_subcommand("evaluate", "leave-one-subject-out x 5-fold evaluation");
  std::string ev_data, ev_out, ev_pre, ev_plots, ev_preds;
  CommonTrainFlags ev_flags;
  int ev_window = 16, ev_jobs = 1;
  double ev_stride = 2.0, ev_sqi = 0.9;
  int64_t ev_seed = -1;
  bool ev_reshape = false;
  ev->add_option("--data-dir", ev_data, "dataset directory")->required();
  ev->add_option("--window", ev_window, "window seconds (16|32|64)")->required();
  ev->add_option("--stride", ev_stride, "stride seconds");
  ev->add_option("--sqi-threshold", ev_sqi, "SQI gate threshold");
  ev->add_option("--pretrained", ev_pre, "checkpoint for the transfer pathway");
  ev->add_option("--jobs", ev_jobs, "parallel fits");
  ev->add_option("--seed", ev_seed, "seed (default RRWAVE_SEED or 0)");
  ev->add_option("--config", ev_flags.config_path, "train config JSON");
  ev->add_option("--model-config", ev_flags.model_config_path, "model config JSON");
  ev->add_flag("--plain", ev_flags.plain, "evaluate the plain variant");
  ev->add_option("--lr", ev_flags.lr, "learning-rate override");
  ev->add_option("--max-epochs", ev_flags.max_epochs, "epoch cap override");
  ev->add_option("--batch-size", ev_flags.batch_size, "batch size override");
  ev->add_option("--out", ev_out, "report JSON path")->required();
  ev->add_option("--plots", ev_plots, "directory for plot-data CSVs");
  ev->add_option("--predictions", ev_preds, "per-window fold-mean predictions CSV");
  ev->add_flag("--reshape-head", ev_reshape, "accept a pretrained checkpoint at another W");

  auto* pr = app.add_subcommand("predict", "windowed predictions for a single PPG CSV");
  std::string pr_model, pr_ppg, pr_out;
  int pr_window = 16;
  double pr_stride = 2.0, pr_sqi = 0.9;
  bool pr_no_sqi = false;
  int64_t pr_seed = -1;
  pr->add_option("--model", pr_model, "checkpoint")->required();
  pr->add_option("--ppg", pr_ppg, "PPG CSV (t_seconds,value)")->required();
  pr->add_option("--window", pr_window, "window seconds")->required();
  pr->add_option("--stride", pr_stride, "stride seconds");
  pr->add_flag("--no-sqi", pr_no_sqi, "predict every window, skip the quality gate");
  pr->add_option("--sqi-threshold", pr_sqi, "SQI gate threshold");
  pr->add_option("--out", pr_out, "predictions CSV")->required();
  pr->add_option("--seed", pr_seed, "seed recorded in the manifest");

  auto* sn = app.add_subcommand("snr", "per-window spectral SNR for a dataset");
  std::string sn_data, sn_out;
  int sn_window = 16;
  double sn_stride = 2.0, sn_sqi = 0.9;
  bool sn_no_sqi = false;
  int64_t sn_seed = -1;
  sn->add_option("--data-dir", sn_data, "dataset directory")->required();
  sn->add_option("--window", sn_window, "window seconds")->required();
  sn->add_option("--stride", sn_stride, "stride seconds");
  sn->add_flag("--no-sqi", sn_no_sqi, "keep windows that fail the quality gate");
  sn->add_option("--sqi-threshold", sn_sqi, "SQI gate threshold");
  sn->add_option("--out", sn_out, "snr CSV")->required();
  sn->add_option("--seed", sn_seed, "seed recorded in the manifest");

  auto* ew = app.add_subcommand("ews", "early-warning-score analysis of predictions");
  std::string ew_report, ew_rubric, ew_out;
  int64_t ew_seed = -1;
  ew->add_option("--report", ew_report, "predictions CSV with truth_bpm,pred_bpm")->required();
  ew->add_option("--rubric", ew_rubric, "rubric JSON (default: standard RR rubric)");
  ew->add_option("--out", ew_out, "EWS report JSON")->required();
  ew->add_option("--seed", ew_seed, "seed recorded in the manifest");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  if (threads > 0) setenv("RRWAVE_THREADS", std::to_string(threads).c_str(), 1);

  try {
    if (app.got_subcommand(synth))
      return cmd_synth(sy_out, sy_subjects, sy_rr, sy_hr, sy_duration, sy_segments, sy_noise,
                       sy_fs, sy_seed);
    if (app.got_subcommand(prep))
      return cmd_preprocess(pp_data, pp_window, pp_stride, pp_sqi, pp_flat, pp_out, pp_audit,
                            pp_seed);
    if (app.got_subcommand(train_cmd)) return cmd_train_or_finetune(tr_flags, "", false, false);
    if (app.got_subcommand(ft_cmd))
      return cmd_train_or_finetune(ft_flags, ft_from, ft_reset_bn, ft_reshape);
    if (app.got_subcommand(ev))
      return cmd_evaluate(ev_data, ev_window, ev_stride, ev_sqi, ev_pre, ev_jobs, ev_seed,
                          ev_flags, ev_out, ev_plots, ev_preds, ev_reshape);
    if (app.got_subcommand(pr))
      return cmd_predict(pr_model, pr_ppg, pr_window, pr_stride, pr_no_sqi, pr_sqi, pr_out,
                         pr_seed);
    if (app.got_subcommand(sn))
      return cmd_snr(sn_data, sn_window, sn_stride, sn_no_sqi, sn_sqi, sn_out, sn_seed);
    if (app.got_subcommand(ew)) return cmd_ews(ew_report, ew_rubric, ew_out, ew_seed);
    raise(Err::UnknownSubcommand, "no subcommand selected");
  } catch (const Error& e) {
    std::fprintf(stderr, "rrwave: %s\n", e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "rrwave: internal error: %s\n", e.what());
    return 2;
  }
  return 0;
}
