#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "realmix/experiments.hpp"
#include "realmix/synth.hpp"

using namespace realmix;
namespace fs = std::filesystem;

namespace {

DatasetBundle& exp_data() {
  static DatasetBundle data = make_synthetic_dataset(30, 8, 777);
  return data;
}

Config exp_config() {
  Config cfg;
  cfg.num_classes = 10;
  cfg.total_steps = 4;
  cfg.batch_size = 6;
  cfg.unlabeled_batch_size = 6;
  cfg.extend_copies = 2;
  cfg.model_width = 3;
  cfg.eval_every = 4;
  cfg.lambda_max = 5.0;
  cfg.lambda_rampup_steps = 10;
  cfg.augment_policy.translate_max = 1;
  cfg.extend_policy.translate_max = 1;
  cfg.extend_policy.cutout_size = 3;
  return cfg;
}

int count_lines(const fs::path& p) {
  std::ifstream f(p);
  REQUIRE(f.good());
  int n = 0;
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) ++n;
  return n;
}

}  // namespace

TEST_CASE("label sweep report shape and baselines") {
  ExperimentReport r = run_label_sweep(exp_config(), {50, 100}, {1, 2}, exp_data(), 2);
  REQUIRE(r.kind == "labels");
  // realmix + labeled_only per count, plus fully_supervised
  REQUIRE(r.conditions.size() == 5);
  REQUIRE(r.find("realmix/n=50") != nullptr);
  REQUIRE(r.find("labeled_only/n=100") != nullptr);
  REQUIRE(r.find("fully_supervised") != nullptr);
  REQUIRE(r.baseline_error.has_value());
  for (const auto& c : r.conditions) {
    REQUIRE(c.errors.size() == 2);
    REQUIRE(c.stddev.has_value());
    for (double e : c.errors) {
      REQUIRE(e >= 0.0);
      REQUIRE(e <= 1.0);
    }
  }
}

TEST_CASE("single count, single seed: one row, no std") {
  ExperimentReport r = run_label_sweep(exp_config(), {50}, {3}, exp_data());
  const Condition* c = r.find("realmix/n=50");
  REQUIRE(c != nullptr);
  REQUIRE(c->errors.size() == 1);
  REQUIRE_FALSE(c->stddev.has_value());
}

TEST_CASE("mismatch sweep: per-level conditions with the gamma map") {
  std::map<int, double> gmap = {{0, 0.0}, {50, 0.4}, {100, 0.85}};
  ExperimentReport r = run_mismatch_sweep(exp_config(), {0, 50, 100}, gmap, {1}, exp_data(),
                                          exp_data().groups.at("shapes"), 10, 2);
  REQUIRE(r.kind == "mismatch");
  REQUIRE(r.conditions.size() == 4);  // 3 levels + labeled_only
  REQUIRE(r.find("realmix/mismatch=50")->params.at("gamma").get<double>() == 0.4);
  REQUIRE(r.baseline_error.has_value());

  // missing gamma for a level is a validation error
  REQUIRE_THROWS_AS(run_mismatch_sweep(exp_config(), {0, 25}, gmap, {1}, exp_data(),
                                       exp_data().groups.at("shapes"), 10),
                    ValidationError);
}

TEST_CASE("ablation: empty variant set reports the control only") {
  AblationSetting setting;
  setting.kind = AblationSetting::Kind::kLabels;
  setting.n_labels = 50;
  ExperimentReport r = run_ablation(exp_config(), setting, {}, {1}, exp_data());
  REQUIRE(r.conditions.size() == 1);
  REQUIRE(r.conditions[0].name == "control");
  REQUIRE(r.baseline_error == r.conditions[0].mean);
}

TEST_CASE("ablation: variants pair with the control under shared seeds") {
  AblationSetting setting;
  setting.kind = AblationSetting::Kind::kLabels;
  setting.n_labels = 50;
  VariantList variants = {{"simple_aug", {"extend_policy.cutout_size=0"}},
                          {"copies_1", {"extend_copies=1"}}};
  ExperimentReport r = run_ablation(exp_config(), setting, variants, {1, 2}, exp_data(), 2);
  REQUIRE(r.conditions.size() == 3);
  REQUIRE(r.conditions[0].name == "control");
  REQUIRE(r.find("simple_aug") != nullptr);
  REQUIRE(r.find("copies_1") != nullptr);
  for (const auto& c : r.conditions) REQUIRE(c.seeds == std::vector<int64_t>{1, 2});
}

TEST_CASE("transfer: four arms; zero pretraining makes arm d equal arm c") {
  Config cfg = exp_config();
  TransferSpec spec;
  spec.source_classes = exp_data().groups.at("textures");
  spec.target_classes = exp_data().groups.at("shapes");
  spec.target_labels_per_class = 5;
  spec.pretrain_steps = 0;
  ExperimentReport r = run_transfer(cfg, spec, {1, 2}, exp_data(), 2);
  REQUIRE(r.conditions.size() == 4);
  const Condition* scratch = r.find("realmix_scratch");
  const Condition* pretrained = r.find("realmix_pretrained");
  REQUIRE(scratch != nullptr);
  REQUIRE(pretrained != nullptr);
  // zero pretraining: the donor trunk IS the seed init, so the arms coincide
  REQUIRE(scratch->errors == pretrained->errors);

  TransferSpec overlapping = spec;
  overlapping.target_classes = spec.source_classes;
  REQUIRE_THROWS_AS(run_transfer(cfg, overlapping, {1}, exp_data()), ValidationError);
}

TEST_CASE("report json round trip and emitted files") {
  ExperimentReport r = run_label_sweep(exp_config(), {50}, {1, 2}, exp_data(), 2);
  auto dir = fs::temp_directory_path() / "realmix_report_test";
  fs::remove_all(dir);
  emit_report(r, dir.string());

  ExperimentReport back = load_report((dir / "report.json").string());
  REQUIRE(back == r);

  // summary.csv: header + one row per condition
  REQUIRE(count_lines(dir / "summary.csv") == static_cast<int>(r.conditions.size()) + 1);
  REQUIRE(count_lines(dir / "series.csv") == static_cast<int>(r.conditions.size()) + 1);
}

TEST_CASE("mismatch series carries the level coordinates") {
  std::map<int, double> gmap = {{0, 0.0}, {25, 0.2}, {50, 0.4}, {75, 0.6}, {100, 0.85}};
  Config cfg = exp_config();
  cfg.total_steps = 2;
  cfg.eval_every = 2;
  ExperimentReport r = run_mismatch_sweep(cfg, {0, 25, 50, 75, 100}, gmap, {1}, exp_data(),
                                          exp_data().groups.at("shapes"), 8, 2);
  std::vector<double> xs;
  for (const auto& c : r.conditions)
    if (c.name.rfind("realmix/", 0) == 0) xs.push_back(c.x);
  REQUIRE(xs == std::vector<double>{0, 25, 50, 75, 100});
}

TEST_CASE("parallel sweeps match serial sweeps exactly") {
  Config cfg = exp_config();
  ExperimentReport serial = run_label_sweep(cfg, {50}, {1, 2}, exp_data(), 1);
  ExperimentReport parallel = run_label_sweep(cfg, {50}, {1, 2}, exp_data(), 2);
  REQUIRE(serial.conditions.size() == parallel.conditions.size());
  for (size_t i = 0; i < serial.conditions.size(); ++i)
    REQUIRE(serial.conditions[i].errors == parallel.conditions[i].errors);
}

TEST_CASE("worker exceptions surface from run_parallel") {
  std::vector<std::function<void()>> tasks;
  tasks.emplace_back([] {});
  tasks.emplace_back([] { throw ValidationError("boom"); });
  REQUIRE_THROWS_AS(run_parallel(tasks, 2), ValidationError);
}
