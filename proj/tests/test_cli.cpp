#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "rrwave/binio.hpp"
#include "rrwave/eval.hpp"

using namespace rrwave;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kWork = fs::temp_directory_path() / "rrwave_cli_test";

int run(const std::string& args) {
  const std::string cmd = std::string(RRWAVE_BIN) + " " + args + " 2>>" +
                          (kWork / "stderr.log").string();
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  auto bytes = read_file_bytes(p.string());
  return std::string(bytes.begin(), bytes.end());
}

}  // namespace

TEST_CASE("cli pipeline: synth -> preprocess -> train -> predict -> snr -> ews") {
  fs::remove_all(kWork);
  fs::create_directories(kWork);
  const std::string W = kWork.string();

  // narrow model keeps the smoke run fast; the architecture is unchanged
  std::ofstream(kWork / "narrow.json")
      << R"({"residual_filters":[4,4,8,8,12,12,16,16],"head_dims":[8,4,1]})";
  std::ofstream(kWork / "tc.json") << R"({"lr":1e-3,"max_epochs":2,"batch_size":16})";

  REQUIRE(run("synth --subjects 6 --rr 10..26 --duration 60 --seed 4 --out " + W + "/toy") == 0);
  CHECK(fs::exists(kWork / "toy" / "s01" / "ppg.csv"));
  CHECK(fs::exists(kWork / "toy" / "manifest.json"));

  REQUIRE(run("preprocess --data-dir " + W + "/toy --window 16 --stride 2 --out " + W +
              "/w.bin --seed 4") == 0);
  CHECK(fs::exists(kWork / "w.bin.sqi.csv"));
  CHECK(fs::exists(kWork / "w.bin.manifest.json"));
  const auto audit = slurp(kWork / "w.bin.sqi.csv");
  CHECK(audit.find("subject,start_t,k,f1,sqi,accepted") == 0);

  REQUIRE(run("train --windows " + W + "/w.bin --window 16 --config " + W + "/tc.json" +
              " --model-config " + W + "/narrow.json --out " + W + "/m.rrwn --log " + W +
              "/hist.csv --seed 5") == 0);
  CHECK(fs::exists(kWork / "m.rrwn"));
  const auto hist = slurp(kWork / "hist.csv");
  CHECK(hist.find("epoch,train_mse,val_mse,lr") == 0);

  SUBCASE("predict emits ok rows and respects the SQI gate") {
    REQUIRE(run("predict --model " + W + "/m.rrwn --ppg " + W + "/toy/s01/ppg.csv" +
                " --window 16 --out " + W + "/preds.csv") == 0);
    const auto preds = slurp(kWork / "preds.csv");
    CHECK(preds.find("start_t,sqi,status,rr_bpm") == 0);
    CHECK(preds.find(",ok,") != std::string::npos);

    // a constant (flatlining) PPG is rejected row by row
    {
      std::ofstream flat(kWork / "flat.csv");
      flat << "t_seconds,value\n";
      for (int i = 0; i < 1200; ++i) flat << (i * 0.02) << ",1.0\n";
    }
    REQUIRE(run("predict --model " + W + "/m.rrwn --ppg " + W + "/flat.csv --window 16 --out " +
                W + "/flat_preds.csv") == 0);
    const auto flat_preds = slurp(kWork / "flat_preds.csv");
    CHECK(flat_preds.find(",ok,") == std::string::npos);
    CHECK(flat_preds.find(",rejected,") != std::string::npos);

    // --no-sqi answers every window anyway
    REQUIRE(run("predict --model " + W + "/m.rrwn --ppg " + W + "/flat.csv --window 16 --no-sqi" +
                " --out " + W + "/flat_all.csv") == 0);
    CHECK(slurp(kWork / "flat_all.csv").find(",ok,") != std::string::npos);
  }

  SUBCASE("snr and ews consume pipeline outputs") {
    REQUIRE(run("snr --data-dir " + W + "/toy --window 16 --out " + W + "/snr.csv") == 0);
    CHECK(slurp(kWork / "snr.csv").find("subject,start_t,snr_db") == 0);

    {
      std::ofstream p(kWork / "p.csv");
      p << "subject,start_t,truth_bpm,pred_bpm\n";
      p << "a,0,15,15\na,2,10,11\na,4,26,24\na,6,22,8\n";
    }
    REQUIRE(run("ews --report " + W + "/p.csv --out " + W + "/ews.json") == 0);
    const json ews = json::parse(slurp(kWork / "ews.json"));
    CHECK(ews.contains("confusion"));
    CHECK(ews.contains("f1_macro"));
  }

  SUBCASE("exit codes: validation failures return 1") {
    CHECK(run("bogus-subcommand") == 1);
    CHECK(run("train --windows " + W + "/nope.bin --out " + W + "/x.rrwn") == 1);
    CHECK(run("predict --model " + W + "/m.rrwn --ppg " + W + "/toy/s01/ppg.csv --window 32" +
              " --out " + W + "/x.csv") == 1);  // W mismatch -> ConfigMismatch
    CHECK(run("preprocess --data-dir " + W + "/toy --window 20 --out " + W + "/x.bin") == 1);
  }

  SUBCASE("deterministic reruns produce identical artifacts") {
    REQUIRE(run("train --windows " + W + "/w.bin --config " + W + "/tc.json --model-config " + W +
                "/narrow.json --out " + W + "/m2.rrwn --seed 5") == 0);
    CHECK(read_file_bytes((kWork / "m.rrwn").string()) ==
          read_file_bytes((kWork / "m2.rrwn").string()));
  }
}

TEST_CASE("cli evaluate produces a schema-complete report") {
  const std::string W = kWork.string();
  REQUIRE(fs::exists(kWork / "toy"));
  std::ofstream(kWork / "fast.json")
      << R"({"lr":1e-3,"max_epochs":1,"batch_size":16})";
  REQUIRE(run("evaluate --data-dir " + W + "/toy --window 16 --config " + W + "/fast.json" +
              " --model-config " + W + "/narrow.json --jobs 2 --seed 6 --out " + W +
              "/report.json --predictions " + W + "/p2.csv --plots " + W + "/plots") == 0);
  const EvalReport rep = EvalReport::from_json(slurp(kWork / "report.json"));
  CHECK(rep.subjects.size() == 6);
  for (const auto& s : rep.subjects)
    for (double v : s.fold_maes) CHECK(std::isfinite(v));
  CHECK(fs::exists(kWork / "plots" / "rr_hist.csv"));
  CHECK(fs::exists(kWork / "plots" / "snr_quartiles.csv"));
  CHECK(slurp(kWork / "p2.csv").find("subject,start_t,truth_bpm,pred_bpm") == 0);
  CHECK(fs::exists(kWork / "report.json.manifest.json"));
}
