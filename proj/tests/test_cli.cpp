#include <doctest.h>

#include <sstream>

#include <json.hpp>

#include "evpupil/cli.hpp"
#include "evpupil/slicing.hpp"
#include "support.hpp"

using namespace evpupil;
using namespace testsupport;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

nlohmann::json load_json(const fs::path& p) { return nlohmann::json::parse(read_file(p)); }

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors") {
  CHECK(run_cli({}).code == cli::kExitValidation);
  CHECK(run_cli({"frobnicate"}).code == cli::kExitValidation);
  CHECK(run_cli({"--help"}).code == cli::kExitOk);
  CHECK(run_cli({"slice"}).code == cli::kExitValidation);
  CHECK(run_cli({"slice", "--input", "surely/not/here.bin"}).code == cli::kExitIo);
  CHECK(run_cli({"slice", "--input", "x", "--strategy", "sideways"}).code == cli::kExitValidation);
}

TEST_CASE("malformed events exit with a validation code") {
  const auto dir = temp_dir("cli_bad_events");
  write_file(dir / "e.csv", "t_us,x,y,p\n0,1,1,1\n1,one,1,1\n");
  const Outcome o = run_cli({"slice", "--input", (dir / "e.csv").string(), "--out", dir.string()});
  CHECK(o.code == cli::kExitValidation);
  CHECK(o.err.find("line 3") != std::string::npos);
}

TEST_CASE("fixed-time slicing from the command line") {
  const auto dir = temp_dir("cli_fixed");
  REQUIRE(run_cli({"synth", "--scenario", "mixed", "--duration-ms", "500", "--seed", "4", "--out", dir.string()}).code ==
          0);
  REQUIRE(fs::exists(dir / "events.bin"));
  REQUIRE(fs::exists(dir / "truth.csv"));
  const Outcome o = run_cli({"slice", "--input", (dir / "events.bin").string(), "--strategy", "fixed-time",
                             "--window-ms", "30", "--out", dir.string()});
  REQUIRE(o.code == 0);
  const auto rows = read_slice_report(dir / "slices.csv");
  REQUIRE(!rows.empty());
  for (const auto& r : rows) CHECK(r.t_end - r.t_start <= 30'000);
}

TEST_CASE("a small pipeline writes every metric") {
  const auto dir = temp_dir("cli_pipeline");
  const Outcome o = run_cli({"pipeline", "--synth-users", "3", "--session-ms", "1500", "--seed", "9",
                             "--bench-repetitions", "10", "--out", dir.string()});
  REQUIRE_MESSAGE(o.code == 0, o.err);
  const auto m = load_json(dir / "metrics.json");
  for (const char* key : {"iou_mean", "dice_mean", "mae_px", "miss_rate", "accuracy", "eer", "far", "frr",
                          "effective_frr", "latency_ms_p50", "latency_ms_p95", "classification_latency_ms_p50"}) {
    CHECK_MESSAGE(m.contains(key), key);
    if (m.contains(key)) CHECK_MESSAGE(m.at(key).is_number(), key);
  }
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK(fs::exists(dir / "models" / "u00.ptf"));
  CHECK(fs::exists(dir / "auth" / "decisions.csv"));
  CHECK(fs::exists(dir / "sessions" / "u02_s1" / "features.csv"));
}

TEST_CASE("the pipeline equals its subcommands run by hand") {
  const auto a = temp_dir("cli_compose_pipe");
  const auto b = temp_dir("cli_compose_hand");
  REQUIRE(run_cli({"pipeline", "--synth-users", "2", "--session-ms", "1200", "--seed", "13", "--bench-repetitions",
                   "10", "--out", a.string()})
              .code == 0);

  const std::string seed = "13";
  const fs::path sessions = b / "sessions";
  REQUIRE(run_cli({"synth", "--scenario", "population", "--synth-users", "2", "--session-ms", "1200", "--seed", seed,
                   "--out", sessions.string()})
              .code == 0);
  std::vector<std::string> train_args{"train", "--seed", seed, "--out", (b / "models").string(), "--features"};
  std::vector<std::string> auth_args{"auth", "--seed", seed, "--threshold", "0.5", "--models", (b / "models").string(),
                                     "--out", (b / "auth").string(), "--features"};
  std::vector<std::string> train_files, test_files;
  for (const std::string user : {"u00", "u01"}) {
    for (int s = 0; s < 2; ++s) {
      const fs::path d = sessions / (user + "_s" + std::to_string(s));
      const std::string out = d.string();
      REQUIRE(run_cli({"slice", "--seed", seed, "--input", (d / "events.bin").string(), "--out", out}).code == 0);
      REQUIRE(run_cli({"segment", "--seed", seed, "--input", (d / "events.bin").string(), "--slices",
                       (d / "slices.csv").string(), "--out", out})
                  .code == 0);
      REQUIRE(run_cli({"track", "--seed", seed, "--detections", (d / "detections.csv").string(), "--out", out}).code ==
              0);
      REQUIRE(run_cli({"features", "--seed", seed, "--kinematics", (d / "kinematics.csv").string(), "--user", user,
                       "--session", std::to_string(s), "--out", out})
                  .code == 0);
      (s == 0 ? train_files : test_files).push_back((d / "features.csv").string());
    }
  }
  train_args.insert(train_args.end(), train_files.begin(), train_files.end());
  auth_args.insert(auth_args.end(), test_files.begin(), test_files.end());
  REQUIRE(run_cli(train_args).code == 0);
  REQUIRE(run_cli(auth_args).code == 0);

  for (const char* f : {"sessions/population.json", "sessions/u01_s1/events.bin", "sessions/u01_s1/slices.csv",
                        "sessions/u01_s1/detections.csv", "sessions/u00_s0/kinematics.csv",
                        "sessions/u00_s1/features.csv", "models/u00.ptf", "models/u01.ptf", "auth/scores.csv",
                        "auth/decisions.csv"}) {
    CHECK_MESSAGE(read_file(a / f) == read_file(b / f), f);
  }
}

}  // TEST_SUITE
