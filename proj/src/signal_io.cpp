#include "rrwave/signal_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <numbers>

#include "json.hpp"
#include "rrwave/binio.hpp"
#include "rrwave/crc32.hpp"
#include "rrwave/rng.hpp"

namespace rrwave {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

double parse_field(const std::string& field, const std::string& file, size_t line) {
  double v = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v))
    raise(Err::MalformedRow, file + " line " + std::to_string(line) + ": bad value '" + field + "'");
  return v;
}

// Two-column CSV with a one-line header; returns (col0, col1) rows.
std::vector<std::pair<double, double>> read_csv2(const std::string& path) {
  auto bytes = read_file_bytes(path);
  std::vector<std::pair<double, double>> rows;
  size_t line_no = 0;
  size_t pos = 0;
  const std::string name = fs::path(path).filename().string();
  while (pos < bytes.size()) {
    size_t eol = pos;
    while (eol < bytes.size() && bytes[eol] != '\n') ++eol;
    size_t len = eol - pos;
    if (len > 0 && bytes[pos + len - 1] == '\r') --len;
    std::string line(reinterpret_cast<const char*>(bytes.data() + pos), len);
    pos = eol + 1;
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1) continue;  // header
    const size_t comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos)
      raise(Err::MalformedRow, name + " line " + std::to_string(line_no) + ": expected 2 columns");
    rows.emplace_back(parse_field(line.substr(0, comma), name, line_no),
                      parse_field(line.substr(comma + 1), name, line_no));
  }
  return rows;
}

}  // namespace

PpgRecord load_record(const std::string& dir) {
  const fs::path base(dir);
  const auto ppg_path = base / "ppg.csv";
  const auto rr_path = base / "rr.csv";
  require(fs::exists(ppg_path), Err::MissingFile, ppg_path.string());
  require(fs::exists(rr_path), Err::MissingFile, rr_path.string());

  PpgRecord rec;
  rec.subject_id = base.filename().string();
  if (rec.subject_id.empty()) rec.subject_id = base.parent_path().filename().string();

  const auto ppg = read_csv2(ppg_path.string());
  require(ppg.size() >= 2, Err::EmptySignal, ppg_path.string() + ": need at least 2 samples");
  for (size_t i = 1; i < ppg.size(); ++i)
    if (ppg[i].first <= ppg[i - 1].first)
      raise(Err::NonMonotonicTimestamps,
            "ppg.csv row " + std::to_string(i + 2) + ": t not increasing");
  const double span = ppg.back().first - ppg.front().first;
  const double dt = span / static_cast<double>(ppg.size() - 1);
  for (size_t i = 0; i < ppg.size(); ++i) {
    const double expect = ppg.front().first + static_cast<double>(i) * dt;
    if (std::abs(ppg[i].first - expect) > 0.01 * dt)
      raise(Err::MalformedRow, "ppg.csv row " + std::to_string(i + 2) + ": non-uniform sampling");
  }
  rec.fs_raw = 1.0 / dt;
  rec.samples.reserve(ppg.size());
  for (const auto& [t, v] : ppg) rec.samples.push_back(v);

  const auto rr = read_csv2(rr_path.string());
  for (size_t i = 0; i < rr.size(); ++i) {
    if (i > 0 && rr[i].first <= rr[i - 1].first)
      raise(Err::NonMonotonicTimestamps, "rr.csv row " + std::to_string(i + 2) + ": t not increasing");
    if (rr[i].second < 0.0 || rr[i].second > 120.0)
      raise(Err::MalformedRow,
            "rr.csv row " + std::to_string(i + 2) + ": rr_bpm outside [0, 120]");
    rec.rr_ref.push_back(rr[i]);
  }
  return rec;
}

PpgRecord load_ppg_csv(const std::string& path) {
  require(fs::exists(path), Err::MissingFile, path);
  PpgRecord rec;
  rec.subject_id = fs::path(path).stem().string();
  const auto ppg = read_csv2(path);
  require(ppg.size() >= 2, Err::EmptySignal, path + ": need at least 2 samples");
  for (size_t i = 1; i < ppg.size(); ++i)
    if (ppg[i].first <= ppg[i - 1].first)
      raise(Err::NonMonotonicTimestamps, path + " row " + std::to_string(i + 2));
  const double dt = (ppg.back().first - ppg.front().first) / static_cast<double>(ppg.size() - 1);
  for (size_t i = 0; i < ppg.size(); ++i) {
    const double expect = ppg.front().first + static_cast<double>(i) * dt;
    if (std::abs(ppg[i].first - expect) > 0.01 * dt)
      raise(Err::MalformedRow, path + " row " + std::to_string(i + 2) + ": non-uniform sampling");
  }
  rec.fs_raw = 1.0 / dt;
  for (const auto& [t, v] : ppg) rec.samples.push_back(v);
  return rec;
}

PpgRecord resample(const PpgRecord& record, double fs_target) {
  require(fs_target > 0.0, Err::Precondition, "fs_target must be > 0");
  require(record.samples.size() >= 2, Err::EmptySignal, record.subject_id);
  const int64_t n = static_cast<int64_t>(record.samples.size());
  // Cover the original time span [0, (n-1)/fs] at the target rate; endpoints
  // land exactly on source samples when the ratio is integral.
  const int64_t out_n =
      static_cast<int64_t>(std::floor(static_cast<double>(n - 1) * fs_target / record.fs_raw +
                                      1e-9)) +
      1;
  PpgRecord out;
  out.subject_id = record.subject_id;
  out.fs_raw = fs_target;
  out.rr_ref = record.rr_ref;
  out.samples.resize(static_cast<size_t>(out_n));
  const double step = record.fs_raw / fs_target;  // source samples per output sample
  for (int64_t i = 0; i < out_n; ++i) {
    double u = static_cast<double>(i) * step;
    if (u > static_cast<double>(n - 1)) u = static_cast<double>(n - 1);
    int64_t j = static_cast<int64_t>(u);
    if (j > n - 2) j = n - 2;
    const double frac = u - static_cast<double>(j);
    out.samples[static_cast<size_t>(i)] =
        record.samples[static_cast<size_t>(j)] * (1.0 - frac) +
        record.samples[static_cast<size_t>(j + 1)] * frac;
  }
  return out;
}

int64_t window_count(int64_t n_samples, int w, double stride_s) {
  const int64_t win = static_cast<int64_t>(std::llround(kCanonicalRateHz)) * w;
  const int64_t stride = std::llround(stride_s * kCanonicalRateHz);
  if (n_samples < win) return 0;
  return (n_samples - win) / stride + 1;
}

std::vector<WindowSample> slide_windows(const PpgRecord& record, int w, double stride_s,
                                        bool warn_on_drop) {
  require(std::abs(record.fs_raw - kCanonicalRateHz) < 1e-9, Err::Precondition,
          "slide_windows expects the canonical 50 Hz rate; resample first");
  require(w == 16 || w == 32 || w == 64, Err::Precondition, "window seconds must be 16, 32 or 64");
  const int64_t stride = std::llround(stride_s * kCanonicalRateHz);
  require(stride >= 1, Err::Precondition, "stride too small");
  const int64_t win = 50 * static_cast<int64_t>(w);
  const int64_t n = static_cast<int64_t>(record.samples.size());
  if (n < win)
    raise(Err::WindowLongerThanSignal, record.subject_id + ": " + std::to_string(w) +
                                           " s window over " + std::to_string(n) + " samples");

  const int64_t count = (n - win) / stride + 1;
  std::vector<WindowSample> out;
  out.reserve(static_cast<size_t>(count));
  int64_t dropped = 0;
  for (int64_t k = 0; k < count; ++k) {
    const int64_t start = k * stride;
    const double t0 = static_cast<double>(start) / kCanonicalRateHz;
    double sum = 0.0;
    int64_t cnt = 0;
    for (const auto& [t, rr] : record.rr_ref) {
      if (t < t0) continue;
      if (t >= t0 + w) break;
      sum += rr;
      ++cnt;
    }
    if (cnt == 0) {
      ++dropped;
      continue;
    }
    WindowSample ws;
    ws.subject_id = record.subject_id;
    ws.start_t = t0;
    ws.w = w;
    ws.values.assign(record.samples.begin() + start, record.samples.begin() + start + win);
    ws.label_bpm = sum / static_cast<double>(cnt);
    out.push_back(std::move(ws));
  }
  if (dropped > 0 && warn_on_drop)
    std::fprintf(stderr, "[rrwave] warning: %s: dropped %lld window(s) with no reference RR\n",
                 record.subject_id.c_str(), static_cast<long long>(dropped));
  return out;
}

std::vector<WindowSample> slide_windows_unlabeled(const PpgRecord& record, int w,
                                                  double stride_s) {
  PpgRecord labeled = record;
  labeled.rr_ref.clear();
  // A zero-rate reference at t=0 labels every window 0 BPM without drops.
  const double horizon = labeled.duration_s();
  for (double t = 0.0; t < horizon; t += 1.0) labeled.rr_ref.emplace_back(t, 0.0);
  return slide_windows(labeled, w, stride_s, /*warn_on_drop=*/false);
}

void SyntheticSpec::validate() const {
  require(duration_s > 0.0, Err::InvalidSpec, "duration must be > 0");
  require(fs_hz > 0.0, Err::InvalidSpec, "fs must be > 0");
  require(hr_bpm > 0.0 && hr_bpm <= 300.0, Err::InvalidSpec, "hr out of range");
  require(rr_bpm >= 0.0 && rr_bpm <= 120.0, Err::InvalidSpec, "rr out of range");
  require(rr_bpm < hr_bpm, Err::InvalidSpec, "rr must be below hr");
  for (double d : {riiv_depth, riav_depth, rifv_depth})
    require(d >= 0.0 && d < 1.0, Err::InvalidSpec, "modulation depth outside [0, 1)");
  require(noise_std >= 0.0, Err::InvalidSpec, "noise_std must be >= 0");
}

namespace {

// Integrated beat phase: strictly increasing, phi(0) = 0, one beat per unit.
double beat_phase(double t, double f_h, double f_r, double rifv) {
  if (rifv <= 0.0 || f_r <= 0.0) return f_h * t;
  const double tau = 2.0 * std::numbers::pi * f_r;
  return f_h * (t + rifv / tau * (1.0 - std::cos(tau * t)));
}

}  // namespace

PpgRecord synthesize(const SyntheticSpec& spec) {
  spec.validate();
  const double f_h = spec.hr_bpm / 60.0;
  const double f_r = spec.rr_bpm / 60.0;

  // Beat times: invert the phase integral by bisection per beat.
  std::vector<double> beats;
  const double horizon = spec.duration_s + 2.0 / f_h;
  if (spec.rifv_depth <= 0.0 || f_r <= 0.0) {
    for (double t = 0.0; t <= horizon; t += 1.0 / f_h) beats.push_back(t);
  } else {
    double prev = 0.0;
    for (int64_t m = 0; ; ++m) {
      double lo = prev, hi = prev + 2.0 / (f_h * (1.0 - spec.rifv_depth));
      while (beat_phase(hi, f_h, f_r, spec.rifv_depth) < static_cast<double>(m)) hi += 1.0 / f_h;
      for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (beat_phase(mid, f_h, f_r, spec.rifv_depth) < static_cast<double>(m))
          lo = mid;
        else
          hi = mid;
      }
      const double t_m = 0.5 * (lo + hi);
      beats.push_back(t_m);
      prev = t_m;
      if (t_m > horizon) break;
    }
  }

  const int64_t n = std::llround(spec.duration_s * spec.fs_hz);
  PpgRecord rec;
  rec.subject_id = spec.subject_id.empty() ? "synth-" + std::to_string(spec.seed) : spec.subject_id;
  rec.fs_raw = spec.fs_hz;
  rec.samples.assign(static_cast<size_t>(n), 0.0);

  const double tau_r = 2.0 * std::numbers::pi * f_r;
  for (size_t m = 0; m < beats.size(); ++m) {
    const double t_m = beats[m];
    const double period = m + 1 < beats.size() ? beats[m + 1] - t_m
                          : m > 0              ? t_m - beats[m - 1]
                                               : 1.0 / f_h;
    const double amp = 1.0 + (f_r > 0.0 ? spec.riav_depth * std::sin(tau_r * t_m) : 0.0);
    // Dicrotic bump blends into the systolic tail as a shoulder; a separable
    // secondary peak would make the two SQI detectors disagree on clean data.
    const double sys_sigma = 0.12 * period;
    const double dic_center = t_m + 0.26 * period;
    const double dic_sigma = 0.16 * period;
    const int64_t i0 = std::max<int64_t>(0, static_cast<int64_t>((t_m - period) * spec.fs_hz));
    const int64_t i1 = std::min<int64_t>(n, static_cast<int64_t>((t_m + period) * spec.fs_hz) + 1);
    for (int64_t i = i0; i < i1; ++i) {
      const double t = static_cast<double>(i) / spec.fs_hz;
      const double ds = (t - t_m) / sys_sigma;
      const double dd = (t - dic_center) / dic_sigma;
      rec.samples[static_cast<size_t>(i)] +=
          amp * (std::exp(-0.5 * ds * ds) + 0.22 * std::exp(-0.5 * dd * dd));
    }
  }

  if (spec.riiv_depth > 0.0 && f_r > 0.0)
    for (int64_t i = 0; i < n; ++i)
      rec.samples[static_cast<size_t>(i)] +=
          spec.riiv_depth * std::sin(tau_r * static_cast<double>(i) / spec.fs_hz);

  if (spec.noise_std > 0.0) {
    Rng rng(mix_seed(spec.seed, 0x5e9a1));
    for (auto& v : rec.samples) v += spec.noise_std * rng.gaussian();
  }

  const int64_t rr_points = std::max<int64_t>(1, static_cast<int64_t>(spec.duration_s));
  for (int64_t t = 0; t < rr_points; ++t)
    rec.rr_ref.emplace_back(static_cast<double>(t), spec.rr_bpm);
  return rec;
}

PpgRecord synthesize_subject(const SubjectProfile& profile) {
  require(profile.segments >= 1, Err::InvalidSpec, "segments must be >= 1");
  Rng rng(mix_seed(profile.seed, 0x5ab9ec7ULL));
  PpgRecord merged;
  merged.subject_id = profile.id;
  merged.fs_raw = profile.fs_hz;
  const double seg_dur = profile.duration_s / profile.segments;
  for (int seg = 0; seg < profile.segments; ++seg) {
    SyntheticSpec spec;
    spec.duration_s = seg_dur;
    spec.hr_bpm = profile.hr_bpm;
    const double offset =
        profile.segments > 1
            ? -profile.rr_jitter_bpm +
                  2.0 * profile.rr_jitter_bpm * static_cast<double>(seg) / (profile.segments - 1)
            : 0.0;
    spec.rr_bpm = std::clamp(profile.rr_base_bpm + offset, 1.0,
                             std::min(119.0, profile.hr_bpm - 5.0));
    spec.riiv_depth = rng.uniform(0.10, 0.25);
    spec.riav_depth = rng.uniform(0.05, 0.20);
    spec.rifv_depth = rng.uniform(0.02, 0.08);
    spec.noise_std = profile.noise_std;
    spec.fs_hz = profile.fs_hz;
    spec.seed = rng.fork(static_cast<uint64_t>(seg)).next_u64();
    spec.subject_id = profile.id;
    PpgRecord part = synthesize(spec);
    const double t0 = static_cast<double>(merged.samples.size()) / profile.fs_hz;
    merged.samples.insert(merged.samples.end(), part.samples.begin(), part.samples.end());
    for (const auto& [t, rr] : part.rr_ref) merged.rr_ref.emplace_back(t0 + t, rr);
  }
  return merged;
}

std::pair<Tensor, Tensor> WindowSet::batch(std::span<const size_t> idx) const {
  require(!idx.empty(), Err::EmptySplit, "empty batch");
  const int64_t len = static_cast<int64_t>(windows.at(idx[0]).values.size());
  Tensor x(Shape(static_cast<int64_t>(idx.size()), len, 1));
  Tensor y(Shape(static_cast<int64_t>(idx.size()), 1));
  for (size_t r = 0; r < idx.size(); ++r) {
    const auto& ws = windows.at(idx[r]);
    require(static_cast<int64_t>(ws.values.size()) == len, Err::ShapeMismatch,
            "mixed window lengths in one batch");
    std::copy(ws.values.begin(), ws.values.end(), x.data().begin() + static_cast<int64_t>(r) * len);
    y.data()[r] = ws.label_bpm;
  }
  return {x, y};
}

std::pair<Tensor, Tensor> WindowSet::batch_all() const {
  std::vector<size_t> idx(windows.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return batch(idx);
}

void save_windows(const std::string& path, const WindowFileMeta& meta,
                  std::span<const WindowSample> windows) {
  ByteWriter wtr;
  wtr.put_bytes("RRWD", 4);
  wtr.put_u32(1);
  const json meta_json = {{"w", meta.w},
                          {"stride_s", meta.stride_s},
                          {"sqi_threshold", meta.sqi_threshold},
                          {"flatline_delta", meta.flatline_delta},
                          {"source", meta.source},
                          {"sr", 50}};
  wtr.put_str(meta_json.dump(), /*u16_len=*/false);
  wtr.put_u32(static_cast<uint32_t>(windows.size()));
  for (const auto& ws : windows) {
    wtr.put_str(ws.subject_id);
    wtr.put_f64(ws.start_t);
    wtr.put_f64(ws.label_bpm);
    for (double v : ws.values) wtr.put_f64(v);
  }
  wtr.put_u32(Crc32::of(wtr.bytes().data(), wtr.size()));
  write_file_atomic(path, wtr.bytes());
}

std::pair<WindowFileMeta, std::vector<WindowSample>> load_windows(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  require(bytes.size() >= 8, Err::BadMagic, path + ": too short");
  require(std::memcmp(bytes.data(), "RRWD", 4) == 0, Err::BadMagic, path);
  require(bytes.size() >= 4 + 4, Err::ChecksumMismatch, path + ": truncated");
  const uint32_t stored_crc = static_cast<uint32_t>(bytes[bytes.size() - 4]) |
                              static_cast<uint32_t>(bytes[bytes.size() - 3]) << 8 |
                              static_cast<uint32_t>(bytes[bytes.size() - 2]) << 16 |
                              static_cast<uint32_t>(bytes[bytes.size() - 1]) << 24;
  require(Crc32::of(bytes.data(), bytes.size() - 4) == stored_crc, Err::ChecksumMismatch, path);

  ByteReader rdr(bytes.data(), bytes.size() - 4, Err::ChecksumMismatch);
  char magic[4];
  rdr.get_bytes(magic, 4);
  const uint32_t version = rdr.get_u32();
  require(version == 1, Err::VersionUnsupported, path + ": version " + std::to_string(version));
  const json meta_json = json::parse(rdr.get_str(/*u16_len=*/false));
  WindowFileMeta meta;
  meta.w = meta_json.at("w").get<int>();
  meta.stride_s = meta_json.at("stride_s").get<double>();
  meta.sqi_threshold = meta_json.at("sqi_threshold").get<double>();
  meta.flatline_delta = meta_json.at("flatline_delta").get<double>();
  meta.source = meta_json.value("source", "");

  const uint32_t count = rdr.get_u32();
  std::vector<WindowSample> windows(count);
  const size_t len = static_cast<size_t>(50) * static_cast<size_t>(meta.w);
  for (uint32_t i = 0; i < count; ++i) {
    auto& ws = windows[i];
    ws.subject_id = rdr.get_str();
    ws.start_t = rdr.get_f64();
    ws.label_bpm = rdr.get_f64();
    ws.w = meta.w;
    ws.values.resize(len);
    for (auto& v : ws.values) v = rdr.get_f64();
  }
  return {meta, std::move(windows)};
}

}  // namespace rrwave
