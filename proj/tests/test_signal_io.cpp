#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "doctest.h"
#include "rrwave/binio.hpp"
#include "rrwave/fft.hpp"
#include "rrwave/rng.hpp"
#include "rrwave/signal_io.hpp"

using namespace rrwave;
namespace fs = std::filesystem;

namespace {

fs::path make_subject_dir(const std::string& name, const std::string& ppg,
                          const std::string& rr) {
  fs::path dir = fs::temp_directory_path() / "rrwave_test" / name;
  fs::create_directories(dir);
  std::ofstream(dir / "ppg.csv") << ppg;
  std::ofstream(dir / "rr.csv") << rr;
  return dir;
}

}  // namespace

TEST_CASE("load_record parses a minimal subject directory") {
  auto dir = make_subject_dir("ok",
                              "t_seconds,value\n0.00,0.1\n0.02,0.2\n0.04,0.15\n",
                              "t_seconds,rr_bpm\n0.0,15\n1.0,16\n");
  PpgRecord rec = load_record(dir.string());
  CHECK(rec.samples.size() == 3);
  CHECK(rec.fs_raw == doctest::Approx(50.0));
  CHECK(rec.rr_ref.size() == 2);
  CHECK(rec.subject_id == "ok");
}

TEST_CASE("load_record rejects bad inputs with the right error codes") {
  SUBCASE("missing file") {
    fs::path dir = fs::temp_directory_path() / "rrwave_test" / "missing";
    fs::create_directories(dir);
    std::ofstream(dir / "ppg.csv") << "t_seconds,value\n0,1\n0.02,2\n";
    CHECK_THROWS_WITH_AS(load_record(dir.string()), doctest::Contains("MissingFile"), Error);
  }
  SUBCASE("non-monotonic rr timestamps") {
    auto dir = make_subject_dir("mono", "t_seconds,value\n0,1\n0.02,2\n",
                                "t_seconds,rr_bpm\n2.0,15\n1.0,15\n");
    CHECK_THROWS_WITH_AS(load_record(dir.string()), doctest::Contains("NonMonotonicTimestamps"),
                         Error);
  }
  SUBCASE("NaN amplitude") {
    auto dir = make_subject_dir("nan", "t_seconds,value\n0,1\n0.02,NaN\n",
                                "t_seconds,rr_bpm\n0,15\n");
    CHECK_THROWS_WITH_AS(load_record(dir.string()), doctest::Contains("MalformedRow"), Error);
  }
  SUBCASE("rr out of range") {
    auto dir = make_subject_dir("range", "t_seconds,value\n0,1\n0.02,2\n",
                                "t_seconds,rr_bpm\n0,130\n");
    CHECK_THROWS_WITH_AS(load_record(dir.string()), doctest::Contains("MalformedRow"), Error);
  }
}

TEST_CASE("resample length and endpoint rules") {
  SUBCASE("125 Hz 480 s -> 24000 samples at 50 Hz") {
    PpgRecord rec;
    rec.subject_id = "r";
    rec.fs_raw = 125.0;
    rec.samples.resize(60000);
    for (size_t i = 0; i < rec.samples.size(); ++i)
      rec.samples[i] = std::sin(0.003 * double(i));
    PpgRecord out = resample(rec, 50.0);
    CHECK(out.samples.size() == 24000);
    CHECK(out.fs_raw == 50.0);
  }
  SUBCASE("identity at the same rate") {
    Rng rng(3);
    PpgRecord rec;
    rec.fs_raw = 50.0;
    for (int i = 0; i < 500; ++i) rec.samples.push_back(rng.uniform(-1, 1));
    PpgRecord out = resample(rec, 50.0);
    CHECK(out.samples == rec.samples);
  }
  SUBCASE("ramp doubles with exact endpoints") {
    PpgRecord rec;
    rec.fs_raw = 1.0;
    rec.samples = {0, 1, 2, 3};
    PpgRecord out = resample(rec, 2.0);
    const std::vector<double> expect = {0, 0.5, 1, 1.5, 2, 2.5, 3};
    REQUIRE(out.samples.size() == expect.size());
    for (size_t i = 0; i < expect.size(); ++i)
      CHECK(out.samples[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  }
  SUBCASE("resample(resample(x, 2f), f) preserves sub-f/4 sinusoids within 1%") {
    const double fs = 50.0, f_sig = 10.0;  // below fs/4 = 12.5 Hz
    PpgRecord rec;
    rec.fs_raw = fs;
    const int n = 2000;
    for (int i = 0; i < n; ++i)
      rec.samples.push_back(std::sin(2 * std::numbers::pi * f_sig * i / fs));
    PpgRecord round = resample(resample(rec, 2 * fs), fs);
    REQUIRE(round.samples.size() == rec.samples.size());
    // Fundamental amplitude via the exact DFT bin (400 whole cycles in n).
    auto amp_at = [&](const std::vector<double>& x) {
      double re = 0, im = 0;
      for (size_t i = 0; i < x.size(); ++i) {
        const double ph = 2 * std::numbers::pi * f_sig * double(i) / fs;
        re += x[i] * std::cos(ph);
        im += x[i] * std::sin(ph);
      }
      return 2.0 * std::sqrt(re * re + im * im) / double(x.size());
    };
    CHECK(amp_at(round.samples) == doctest::Approx(amp_at(rec.samples)).epsilon(0.01));
  }
  SUBCASE("empty signal") {
    PpgRecord rec;
    rec.fs_raw = 50;
    CHECK_THROWS_WITH_AS(resample(rec, 50.0), doctest::Contains("EmptySignal"), Error);
  }
}

TEST_CASE("slide_windows count, labels and boundaries") {
  PpgRecord rec;
  rec.subject_id = "s";
  rec.fs_raw = 50.0;
  rec.samples.assign(480 * 50, 0.5);
  for (int t = 0; t < 480; ++t) rec.rr_ref.emplace_back(double(t), 15.0);

  SUBCASE("480 s, w=16, stride 2 -> 233 windows, constant labels") {
    auto ws = slide_windows(rec, 16, 2.0);
    CHECK(ws.size() == 233);
    for (const auto& w : ws) {
      CHECK(w.values.size() == 800);
      CHECK(w.label_bpm == 15.0);
    }
    CHECK(ws.front().start_t == 0.0);
    CHECK(ws.back().start_t == doctest::Approx(464.0));
  }
  SUBCASE("exactly one window when record length equals the window") {
    rec.samples.resize(16 * 50);
    auto ws = slide_windows(rec, 16, 2.0);
    REQUIRE(ws.size() == 1);
    CHECK(ws[0].start_t == 0.0);
  }
  SUBCASE("window longer than signal") {
    rec.samples.resize(700);
    CHECK_THROWS_WITH_AS(slide_windows(rec, 16, 2.0), doctest::Contains("WindowLongerThanSignal"),
                         Error);
  }
}

TEST_CASE("window count formula holds across random durations") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const int w = std::array<int, 3>{16, 32, 64}[rng.below(3)];
    const double stride = std::array<double, 3>{1.0, 2.0, 4.0}[rng.below(3)];
    const int64_t n = 50 * w + int64_t(rng.below(50000));
    const int64_t expect = (n - 50 * w) / int64_t(std::llround(stride * 50)) + 1;
    CHECK(window_count(n, w, stride) == expect);
  }
}

TEST_CASE("synthesize determinism and structure") {
  SyntheticSpec spec;
  spec.duration_s = 64;
  spec.hr_bpm = 75;
  spec.rr_bpm = 15;
  spec.noise_std = 0.05;
  spec.seed = 7;

  SUBCASE("same seed twice is bit-identical") {
    PpgRecord a = synthesize(spec), b = synthesize(spec);
    CHECK(a.samples == b.samples);
    CHECK(a.rr_ref == b.rr_ref);
  }
  SUBCASE("rr_ref is the constant rate at 1 Hz") {
    PpgRecord rec = synthesize(spec);
    CHECK(rec.rr_ref.size() == 64);
    for (size_t i = 0; i < rec.rr_ref.size(); ++i) {
      CHECK(rec.rr_ref[i].first == double(i));
      CHECK(rec.rr_ref[i].second == 15.0);
    }
  }
  SUBCASE("unmodulated noiseless pulse train is periodic at the beat period") {
    SyntheticSpec plain;
    plain.duration_s = 32;
    plain.hr_bpm = 60;  // 1 s period = 50 samples
    plain.rr_bpm = 12;
    plain.riiv_depth = plain.riav_depth = plain.rifv_depth = 0.0;
    plain.noise_std = 0.0;
    PpgRecord rec = synthesize(plain);
    const int64_t period = 50;
    for (size_t i = 200; i + period + 200 < rec.samples.size(); ++i)
      CHECK(rec.samples[i] == doctest::Approx(rec.samples[i + period]).epsilon(1e-9));
  }
  SUBCASE("baseline modulation shows up at rr/60 Hz in the trend spectrum") {
    SyntheticSpec mod;
    mod.duration_s = 64;
    mod.hr_bpm = 75;
    mod.rr_bpm = 15;  // 0.25 Hz
    mod.riiv_depth = 0.2;
    mod.riav_depth = mod.rifv_depth = 0.0;
    mod.noise_std = 0.0;
    PpgRecord rec = synthesize(mod);
    // Moving mean over one heart period isolates the baseline trend.
    const int hp = int(std::llround(50.0 * 60.0 / mod.hr_bpm));
    std::vector<double> trend;
    for (size_t i = 0; i + hp < rec.samples.size(); ++i) {
      double s = 0;
      for (int j = 0; j < hp; ++j) s += rec.samples[i + j];
      trend.push_back(s / hp);
    }
    double mean = 0;
    for (double v : trend) mean += v;
    mean /= double(trend.size());
    for (double& v : trend) v -= mean;
    auto p = power_spectrum(trend);
    // Peak over the respiratory band 0.1..0.5 Hz must sit at 0.25 Hz.
    const double fs = 50.0, n = double(trend.size());
    size_t lo = size_t(0.1 * n / fs), hi = size_t(0.5 * n / fs), peak = lo;
    for (size_t j = lo; j <= hi; ++j)
      if (p[j] > p[peak]) peak = j;
    CHECK(double(peak) * fs / n == doctest::Approx(0.25).epsilon(0.05));
  }
  SUBCASE("invalid spec") {
    SyntheticSpec bad;
    bad.rr_bpm = 80;
    bad.hr_bpm = 70;
    CHECK_THROWS_WITH_AS(synthesize(bad), doctest::Contains("InvalidSpec"), Error);
  }
}

TEST_CASE("windows container round-trips with CRC protection") {
  SyntheticSpec spec;
  spec.duration_s = 40;
  spec.seed = 3;
  spec.noise_std = 0.02;
  auto rec = synthesize(spec);
  auto windows = slide_windows(rec, 16, 2.0);
  REQUIRE(!windows.empty());

  WindowFileMeta meta;
  meta.w = 16;
  meta.source = "test";
  const auto path = (fs::temp_directory_path() / "rrwave_test" / "w.bin").string();
  save_windows(path, meta, windows);

  auto [meta2, loaded] = load_windows(path);
  CHECK(meta2.w == 16);
  REQUIRE(loaded.size() == windows.size());
  for (size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].values == windows[i].values);
    CHECK(loaded[i].label_bpm == windows[i].label_bpm);
    CHECK(loaded[i].subject_id == windows[i].subject_id);
  }

  SUBCASE("truncation is detected") {
    auto bytes = read_file_bytes(path);
    bytes.resize(bytes.size() - 9);
    write_file_atomic(path + ".trunc", bytes);
    CHECK_THROWS_WITH_AS(load_windows(path + ".trunc"), doctest::Contains("ChecksumMismatch"),
                         Error);
  }
  SUBCASE("bad magic is detected") {
    auto bytes = read_file_bytes(path);
    bytes[0] = 'X';
    write_file_atomic(path + ".magic", bytes);
    CHECK_THROWS_WITH_AS(load_windows(path + ".magic"), doctest::Contains("BadMagic"), Error);
  }
}
