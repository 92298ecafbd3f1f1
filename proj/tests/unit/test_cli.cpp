#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "realmix/splits.hpp"

namespace fs = std::filesystem;

namespace {

const char* kCli = REALMIX_CLI_PATH;

struct CliResult {
  int exit_code;
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(kCli) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return {WEXITSTATUS(status)};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

fs::path fresh_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("realmix_cli_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const std::string kTinyConfig = R"({
  "num_classes": 10, "total_steps": 4, "batch_size": 6, "unlabeled_batch_size": 6,
  "extend_copies": 2, "model_width": 3, "eval_every": 2, "seed": 5,
  "lambda_max": 5, "lambda_rampup_steps": 10, "checkpoint_every": 2,
  "augment_policy": {"translate_max": 1},
  "extend_policy": {"translate_max": 1, "cutout_size": 3}
})";

}  // namespace

TEST_CASE("cli end-to-end: synth, prepare, train, evaluate, report") {
  auto base = fresh_dir("e2e");
  const std::string ds = (base / "data").string();

  REQUIRE(run_cli("synth --out " + ds + " --per-class 30 --test-per-class 6 --side 12 --seed 3")
              .exit_code == 0);
  REQUIRE(fs::exists(fs::path(ds) / "manifest.json"));

  std::ofstream(base / "config.json") << kTinyConfig;
  const std::string cfg = (base / "config.json").string();

  // prepare a label split with extend cache
  const std::string prep = (base / "prep").string();
  REQUIRE(run_cli("prepare --dataset " + ds + " --labels 50 --seed 1 --config " + cfg +
                  " --extend --out " + prep)
              .exit_code == 0);
  REQUIRE(fs::exists(fs::path(prep) / "split.json"));
  REQUIRE(fs::exists(fs::path(prep) / "config.json"));
  auto split = realmix::load_split((fs::path(prep) / "split.json").string());
  REQUIRE(split.labeled_indices.size() == 50);

  // rerun with identical flags: identical split bytes (needs --force for the manifest)
  const std::string prep2 = (base / "prep2").string();
  REQUIRE(run_cli("prepare --dataset " + ds + " --labels 50 --seed 1 --config " + cfg +
                  " --extend --out " + prep2)
              .exit_code == 0);
  REQUIRE(slurp(fs::path(prep) / "split.json") == slurp(fs::path(prep2) / "split.json"));

  // train twice: byte-identical metrics
  const std::string run1 = (base / "run1").string();
  const std::string run2 = (base / "run2").string();
  REQUIRE(run_cli("train --config " + cfg + " --dataset " + ds + " --split " + prep +
                  "/split.json --out " + run1)
              .exit_code == 0);
  REQUIRE(run_cli("train --config " + cfg + " --dataset " + ds + " --split " + prep +
                  "/split.json --out " + run2)
              .exit_code == 0);
  REQUIRE(slurp(fs::path(run1) / "metrics.csv") == slurp(fs::path(run2) / "metrics.csv"));
  REQUIRE(fs::exists(fs::path(run1) / "checkpoints" / "final" / "params.bin"));

  // run manifest finalized
  nlohmann::json manifest = nlohmann::json::parse(slurp(fs::path(run1) / "run_manifest.json"));
  REQUIRE(manifest.at("exit_status").get<int>() == 0);
  REQUIRE(manifest.at("command").get<std::string>() == "train");

  // evaluate the checkpoint
  REQUIRE(run_cli("evaluate --config " + cfg + " --dataset " + ds + " --checkpoint " + run1 +
                  "/checkpoints/final")
              .exit_code == 0);

  // resume continues from a checkpoint
  const std::string run3 = (base / "run3").string();
  REQUIRE(run_cli("train --config " + cfg + " --dataset " + ds + " --split " + prep +
                  "/split.json --out " + run3 + " --resume " + run1 + "/checkpoints/step_00000002")
              .exit_code == 0);

  // a completed out dir refuses a rerun without --force
  REQUIRE(run_cli("train --config " + cfg + " --dataset " + ds + " --split " + prep +
                  "/split.json --out " + run1)
              .exit_code == 2);
  REQUIRE(run_cli("train --config " + cfg + " --dataset " + ds + " --split " + prep +
                  "/split.json --out " + run1 + " --force")
              .exit_code == 0);
}

TEST_CASE("cli experiment + report regeneration") {
  auto base = fresh_dir("exp");
  const std::string ds = (base / "data").string();
  REQUIRE(run_cli("synth --out " + ds + " --per-class 30 --test-per-class 6 --side 12 --seed 3")
              .exit_code == 0);
  std::ofstream(base / "config.json") << kTinyConfig;
  const std::string cfg = (base / "config.json").string();

  const std::string exp = (base / "exp").string();
  REQUIRE(run_cli("experiment labels --dataset " + ds + " --config " + cfg +
                  " --counts 50 --seeds 1 --jobs 2 --out " + exp)
              .exit_code == 0);
  REQUIRE(fs::exists(fs::path(exp) / "report.json"));
  REQUIRE(fs::exists(fs::path(exp) / "summary.csv"));

  const std::string regen = (base / "regen").string();
  REQUIRE(run_cli("report --in " + exp + "/report.json --out " + regen).exit_code == 0);
  REQUIRE(slurp(fs::path(exp) / "summary.csv") == slurp(fs::path(regen) / "summary.csv"));
  REQUIRE(slurp(fs::path(exp) / "series.csv") == slurp(fs::path(regen) / "series.csv"));
}

TEST_CASE("cli validation failures exit with code 2") {
  auto base = fresh_dir("val");
  const std::string ds = (base / "data").string();
  REQUIRE(run_cli("synth --out " + ds + " --per-class 12 --test-per-class 4 --side 12 --seed 1")
              .exit_code == 0);

  std::ofstream(base / "bad.json") << R"({"gamma": 1.5})";
  REQUIRE(run_cli("prepare --dataset " + ds + " --labels 50 --config " + (base / "bad.json").string() +
                  " --out " + (base / "p").string())
              .exit_code == 2);

  // unknown experiment kind
  std::ofstream(base / "ok.json") << kTinyConfig;
  REQUIRE(run_cli("experiment frobnicate --dataset " + ds + " --config " +
                  (base / "ok.json").string() + " --out " + (base / "x").string())
              .exit_code == 2);

  // infeasible split
  REQUIRE(run_cli("prepare --dataset " + ds + " --labels 7 --config " + (base / "ok.json").string() +
                  " --out " + (base / "y").string())
              .exit_code == 2);

  // missing dataset
  REQUIRE(run_cli("train --config " + (base / "ok.json").string() + " --dataset " +
                  (base / "nodata").string() + " --split nowhere.json --out " +
                  (base / "z").string())
              .exit_code == 2);
}

TEST_CASE("cli override flag mirrors config-file semantics") {
  auto base = fresh_dir("ovr");
  const std::string ds = (base / "data").string();
  REQUIRE(run_cli("synth --out " + ds + " --per-class 12 --test-per-class 4 --side 12 --seed 1")
              .exit_code == 0);
  std::ofstream(base / "config.json") << kTinyConfig;
  const std::string cfg = (base / "config.json").string();

  const std::string prep = (base / "prep").string();
  REQUIRE(run_cli("prepare --dataset " + ds + " --labels 20 --config " + cfg +
                  " --override extend_policy.cutout_size=0 --override gamma=0.5 --out " + prep)
              .exit_code == 0);
  auto emitted = nlohmann::json::parse(slurp(fs::path(prep) / "config.json"));
  REQUIRE(emitted.at("extend_policy").at("cutout_size").get<int>() == 0);
  REQUIRE(emitted.at("gamma").get<double>() == 0.5);

  REQUIRE(run_cli("prepare --dataset " + ds + " --labels 20 --config " + cfg +
                  " --override bogus=1 --out " + (base / "p2").string())
              .exit_code == 2);
}
