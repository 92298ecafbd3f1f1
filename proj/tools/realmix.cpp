// Command-line surface for the RealMix toolkit: dataset synthesis, split and
// extended-pool preparation, training, evaluation, experiment sweeps, and
// report regeneration.
//
// Exit codes: 0 success, 2 validation/usage failure, 3 runtime abort.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "realmix/experiments.hpp"
#include "realmix/synth.hpp"

namespace fs = std::filesystem;
using namespace realmix;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

// Run manifest: written atomically at start, finalized at exit. A completed
// manifest marks a results directory as used; reruns must pick a new --out
// (or pass --force).
class RunManifest {
public:
  RunManifest(std::string command, std::string out_dir, std::string config_path,
              std::string config_hash, bool force)
      : out_dir_(std::move(out_dir)) {
    if (out_dir_.empty()) return;
    const fs::path path = manifest_path();
    if (!force && fs::exists(path)) {
      std::ifstream f(path);
      nlohmann::json j;
      if (f && (f >> j, j.value("exit_status", -1) == 0))
        throw ValidationError("output directory already holds a completed run: " + out_dir_ +
                              " (choose a new --out or pass --force)");
    }
    fs::create_directories(out_dir_);
    doc_["command"] = std::move(command);
    doc_["config_path"] = std::move(config_path);
    doc_["config_hash"] = std::move(config_hash);
    doc_["out_dir"] = out_dir_;
    doc_["started_at"] = iso_timestamp();
    doc_["exit_status"] = nullptr;
    write();
  }

  void finalize(int exit_status) {
    if (out_dir_.empty()) return;
    doc_["finished_at"] = iso_timestamp();
    doc_["exit_status"] = exit_status;
    write();
  }

private:
  fs::path manifest_path() const { return fs::path(out_dir_) / "run_manifest.json"; }

  void write() const {
    const fs::path tmp = manifest_path().string() + ".tmp";
    {
      std::ofstream f(tmp, std::ios::trunc);
      if (!f) throw IoError("cannot write run manifest in " + out_dir_);
      f << doc_.dump(2) << "\n";
    }
    fs::rename(tmp, manifest_path());
  }

  std::string out_dir_;
  nlohmann::json doc_;
};

std::vector<int64_t> parse_seed_list(const std::string& s) {
  std::vector<int64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoll(item));
  }
  if (out.empty()) throw ValidationError("empty seed list");
  return out;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

Config load_config_with_overrides(const std::string& path, const std::vector<std::string>& overrides,
                                  std::optional<int64_t> seed_flag) {
  Config cfg;
  if (!path.empty()) {
    std::vector<std::string> warnings;
    cfg = load_config(path, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  }
  for (const auto& kv : overrides) apply_override(cfg, kv);
  if (seed_flag) {
    cfg.seed = *seed_flag;
    validate_config(cfg);
  }
  return cfg;
}

std::vector<int> group_classes(const DatasetBundle& data, const std::string& group) {
  auto it = data.groups.find(group);
  if (it == data.groups.end())
    throw ValidationError("dataset manifest has no class group named '" + group + "'");
  return it->second;
}

int file_checksum_line(const std::string& label, const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot read back " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string bytes = ss.str();
  std::printf("%s %s fnv1a64:%s\n", label.c_str(), p.string().c_str(),
              checksum_hex(bytes.data(), bytes.size()).c_str());
  return 0;
}

// Builtin ablation variant names plus the generic "name:key=value;key=value"
// form used by `experiment ablation --variants`.
std::pair<std::string, std::vector<std::string>> parse_variant(const std::string& raw) {
  if (raw == "simple_aug") return {raw, {"extend_policy.cutout_size=0"}};
  if (raw == "no_mask") return {raw, {"gamma=0"}};
  if (raw.rfind("copies_", 0) == 0)
    return {raw, {"extend_copies=" + raw.substr(7)}};
  auto colon = raw.find(':');
  if (colon == std::string::npos)
    throw ValidationError("unknown variant '" + raw +
                          "' (builtins: simple_aug, no_mask, copies_N; or name:k=v;k=v)");
  std::vector<std::string> overrides;
  std::stringstream ss(raw.substr(colon + 1));
  std::string kv;
  while (std::getline(ss, kv, ';'))
    if (!kv.empty()) overrides.push_back(kv);
  return {raw.substr(0, colon), overrides};
}

// ---------------------------------------------------------------------------
int cmd_synth(const std::string& out_dir, int per_class, int test_per_class, int side,
              int64_t seed) {
  SynthParams params;
  params.side = side;
  DatasetBundle data = make_synthetic_dataset(per_class, test_per_class, static_cast<uint64_t>(seed),
                                              params);
  save_dataset(data, out_dir);
  std::printf("dataset %s (train=%d test=%d side=%d) checksum fnv1a64:%s\n", out_dir.c_str(),
              data.train.size(), data.test.size(), side, dataset_checksum(data.train).c_str());
  return kExitOk;
}

int cmd_prepare(const std::string& dataset_dir, const std::string& out_dir,
                const std::string& config_path, const std::vector<std::string>& overrides,
                std::optional<int64_t> seed_flag, int labels, int mismatch, int labels_per_class,
                std::optional<double> gamma, const std::string& labeled_group, bool do_extend,
                bool force) {
  Config cfg = load_config_with_overrides(config_path, overrides, seed_flag);
  DatasetBundle data = load_dataset(dataset_dir);

  RunManifest manifest("prepare", out_dir, config_path, config_hash(cfg), force);
  SplitSpec split;
  if (mismatch >= 0) {
    std::vector<int> classes = group_classes(data, labeled_group);
    split = make_mismatch_split(data.train, classes, labels_per_class, mismatch, cfg.seed);
    cfg.class_subset = classes;
    cfg.num_classes = static_cast<int>(classes.size());
    if (gamma) cfg.gamma = *gamma;
    validate_config(cfg);
  } else {
    if (labels <= 0) throw ValidationError("prepare: pass --labels N or --mismatch PCT");
    if (cfg.num_classes != data.train.num_classes())
      cfg.num_classes = data.train.num_classes();
    split = make_label_split(data.train, labels, cfg.seed);
    if (gamma) {
      cfg.gamma = *gamma;
      validate_config(cfg);
    }
  }

  const fs::path split_path = fs::path(out_dir) / "split.json";
  const fs::path config_out = fs::path(out_dir) / "config.json";
  save_split(split, split_path.string());
  save_config(cfg, config_out.string());
  file_checksum_line("split", split_path);
  file_checksum_line("config", config_out);
  std::printf("labeled=%zu unlabeled=%zu\n", split.labeled_indices.size(),
              split.unlabeled_indices.size());

  if (do_extend && !cfg.supervised_only) {
    UnlabeledBatch raw(0, data.train.images.c, data.train.images.h, data.train.images.w);
    raw.data.clear();
    for (int idx : split.unlabeled_indices) raw.push_image(data.train.images.image(idx));
    std::string key;
    const std::string cache_dir = (fs::path(out_dir) / "extend_cache").string();
    UnlabeledBatch pool = extend_cached(raw, cfg.extend_copies, cfg.extend_policy, cfg.seed,
                                        cache_dir, &key);
    std::printf("extended pool %d images cached as %s/%s.bin\n", pool.n, cache_dir.c_str(),
                key.c_str());
    file_checksum_line("extend", fs::path(cache_dir) / (key + ".bin"));
  }
  manifest.finalize(kExitOk);
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& dataset_dir,
              const std::string& split_path, const std::string& out_dir,
              const std::string& resume, const std::vector<std::string>& overrides,
              std::optional<int64_t> seed_flag, bool force) {
  Config cfg = load_config_with_overrides(config_path, overrides, seed_flag);
  DatasetBundle data = load_dataset(dataset_dir);
  SplitSpec split = load_split(split_path);

  RunManifest manifest("train", out_dir, config_path, config_hash(cfg), force);
  TrainOptions opts;
  opts.out_dir = out_dir;
  opts.extend_cache_dir = (fs::path(out_dir) / "extend_cache").string();
  opts.resume_from = resume;

  Trainer trainer(cfg, data.train, split, data.test, opts);
  TrainResult result = trainer.run();
  std::printf("metric step=%lld train_error=%.4f\n",
              static_cast<long long>(trainer.state().step), result.final_train_error);
  std::printf("final test error (EMA): %.2f%%\n", 100.0 * result.final_test_error_ema);
  std::printf("checkpoint: %s\n", result.final_checkpoint.c_str());
  manifest.finalize(kExitOk);
  return kExitOk;
}

int cmd_evaluate(const std::string& config_path, const std::string& dataset_dir,
                 const std::string& checkpoint, const std::vector<std::string>& overrides,
                 bool raw_params) {
  Config cfg = load_config_with_overrides(config_path, overrides, std::nullopt);
  DatasetBundle data = load_dataset(dataset_dir);
  Dataset test = cfg.class_subset.empty() ? data.test : subset_classes(data.test, cfg.class_subset);

  TrainState state;
  state.model = std::make_unique<SmallConvNet>(data.test.images.c, data.test.images.h,
                                               cfg.num_classes, cfg.model_width,
                                               static_cast<uint64_t>(cfg.seed));
  state.ema = state.model->params();
  state.config_hash = "";  // allow evaluating checkpoints from any config
  load_checkpoint(state, checkpoint);

  double err;
  if (raw_params) {
    err = evaluate(*state.model, test);
    std::printf("test error (raw params): %.2f%%\n", 100.0 * err);
  } else {
    err = evaluate_ema(*state.model, state.ema, test);
    std::printf("test error (EMA): %.2f%%\n", 100.0 * err);
  }
  return kExitOk;
}

int cmd_experiment(const std::string& kind, const std::string& config_path,
                   const std::string& dataset_dir, const std::string& out_dir,
                   const std::string& seeds_str, const std::vector<std::string>& overrides,
                   const std::string& counts_str, const std::string& levels_str,
                   const std::string& gammas_str, int labels_per_class,
                   const std::string& labeled_group, const std::string& variants_str,
                   const std::string& setting_str, int setting_labels,
                   const std::string& source_group, const std::string& target_group,
                   int64_t pretrain_steps, int jobs, bool force) {
  Config cfg = load_config_with_overrides(config_path, overrides, std::nullopt);
  DatasetBundle data = load_dataset(dataset_dir);
  std::vector<int64_t> seeds = parse_seed_list(seeds_str);

  RunManifest manifest("experiment " + kind, out_dir, config_path, config_hash(cfg), force);
  ExperimentReport report;
  if (kind == "labels") {
    std::vector<int> counts = parse_int_list(counts_str);
    if (counts.empty()) throw ValidationError("experiment labels: pass --counts");
    report = run_label_sweep(cfg, counts, seeds, data, jobs);
  } else if (kind == "mismatch") {
    std::vector<int> levels = parse_int_list(levels_str);
    if (levels.empty()) levels = {0, 25, 50, 75, 100};
    std::map<int, double> gmap = {{0, 0.0}, {25, 0.20}, {50, 0.40}, {75, 0.60}, {100, 0.85}};
    if (!gammas_str.empty()) {
      gmap.clear();
      std::stringstream ss(gammas_str);
      std::string item;
      while (std::getline(ss, item, ',')) {
        auto eq = item.find('=');
        if (eq == std::string::npos)
          throw ValidationError("--gammas wants level=gamma pairs, got '" + item + "'");
        gmap[std::stoi(item.substr(0, eq))] = std::stod(item.substr(eq + 1));
      }
    }
    std::vector<int> classes = group_classes(data, labeled_group);
    report = run_mismatch_sweep(cfg, levels, gmap, seeds, data, classes, labels_per_class, jobs);
  } else if (kind == "ablation") {
    VariantList variants;
    std::stringstream ss(variants_str);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) variants.push_back(parse_variant(item));
    AblationSetting setting;
    if (setting_str == "labels") {
      setting.kind = AblationSetting::Kind::kLabels;
      setting.n_labels = setting_labels;
    } else if (setting_str == "mismatch") {
      setting.kind = AblationSetting::Kind::kMismatch;
      setting.mismatch_pct = 75;
      setting.labels_per_class = labels_per_class;
      setting.labeled_classes = group_classes(data, labeled_group);
    } else {
      throw ValidationError("--setting must be labels or mismatch");
    }
    report = run_ablation(cfg, setting, variants, seeds, data, jobs);
  } else if (kind == "transfer") {
    TransferSpec spec;
    spec.source_classes = group_classes(data, source_group);
    spec.target_classes = group_classes(data, target_group);
    spec.target_labels_per_class = labels_per_class;
    spec.pretrain_steps = pretrain_steps;
    report = run_transfer(cfg, spec, seeds, data, jobs);
  } else {
    throw ValidationError("unknown experiment kind '" + kind +
                          "' (want labels|mismatch|ablation|transfer)");
  }

  emit_report(report, out_dir);
  for (const auto& c : report.conditions)
    std::printf("condition %-28s mean_error=%.4f%s\n", c.name.c_str(), c.mean,
                c.stddev ? (" std=" + std::to_string(*c.stddev)).c_str() : "");
  std::printf("report: %s/report.json\n", out_dir.c_str());
  manifest.finalize(kExitOk);
  return kExitOk;
}

int cmd_report(const std::string& in_path, const std::string& out_dir) {
  ExperimentReport report = load_report(in_path);
  emit_report(report, out_dir);
  std::printf("wrote %s/{report.json,summary.csv,series.csv}\n", out_dir.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RealMix semi-supervised learning toolkit"};
  app.require_subcommand(1);

  std::string config_path, dataset_dir, out_dir, split_path, resume, checkpoint;
  std::vector<std::string> overrides;
  std::optional<int64_t> seed_flag;
  int jobs = 1;
  bool force = false;

  auto add_common = [&](CLI::App* sub, bool with_out) {
    sub->add_option("--config", config_path, "config JSON file");
    sub->add_option("--override", overrides, "dotted-key=value config override (repeatable)");
    sub->add_option("--seed", seed_flag, "override config seed");
    if (with_out) {
      sub->add_option("--out", out_dir, "output directory")->required();
      sub->add_flag("--force", force, "allow reusing a completed results directory");
    }
  };

  // synth
  auto* synth = app.add_subcommand("synth", "generate the procedural desk-scale dataset");
  int per_class = 560, test_per_class = 120, side = 12;
  int64_t synth_seed = 7;
  synth->add_option("--out", out_dir, "dataset directory")->required();
  synth->add_option("--per-class", per_class, "train samples per class");
  synth->add_option("--test-per-class", test_per_class, "test samples per class");
  synth->add_option("--side", side, "image side in pixels (multiple of 4)");
  synth->add_option("--seed", synth_seed, "generator seed");

  // prepare
  auto* prepare = app.add_subcommand("prepare", "build splits and the extended pool");
  int labels = -1, mismatch = -1, labels_per_class = 40;
  std::optional<double> gamma;
  std::string labeled_group = "shapes";
  bool do_extend = false;
  prepare->add_option("--dataset", dataset_dir, "dataset directory")->required();
  prepare->add_option("--labels", labels, "labeled-set size (class-balanced)");
  prepare->add_option("--mismatch", mismatch, "mismatch percent in {0,25,50,75,100}");
  prepare->add_option("--labels-per-class", labels_per_class, "labels per class (mismatch mode)");
  prepare->add_option("--gamma", gamma, "OOD mask fraction stored in the emitted config");
  prepare->add_option("--labeled-group", labeled_group, "manifest class group for mismatch mode");
  prepare->add_flag("--extend", do_extend, "materialize the extended pool cache");
  add_common(prepare, true);

  // train
  auto* train_cmd = app.add_subcommand("train", "run Algorithm-1 training");
  train_cmd->add_option("--dataset", dataset_dir, "dataset directory")->required();
  train_cmd->add_option("--split", split_path, "split JSON file")->required();
  train_cmd->add_option("--resume", resume, "checkpoint directory to resume from");
  add_common(train_cmd, true);

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint on the test set");
  bool raw_params = false;
  eval_cmd->add_option("--dataset", dataset_dir, "dataset directory")->required();
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  eval_cmd->add_flag("--raw-params", raw_params, "evaluate raw instead of EMA parameters");
  add_common(eval_cmd, false);

  // experiment
  auto* exp_cmd = app.add_subcommand("experiment", "run a paper-protocol sweep");
  std::string kind, seeds_str = "1,2,3", counts_str, levels_str, gammas_str, variants_str;
  std::string setting_str = "labels", source_group = "textures", target_group = "shapes";
  int setting_labels = 250;
  int64_t pretrain_steps = 2000;
  exp_cmd->add_option("kind", kind, "labels|mismatch|ablation|transfer")->required();
  exp_cmd->add_option("--dataset", dataset_dir, "dataset directory")->required();
  exp_cmd->add_option("--seeds", seeds_str, "comma-separated seed list");
  exp_cmd->add_option("--counts", counts_str, "label counts (labels kind)");
  exp_cmd->add_option("--levels", levels_str, "mismatch levels (mismatch kind)");
  exp_cmd->add_option("--gammas", gammas_str, "level=gamma overrides (mismatch kind)");
  exp_cmd->add_option("--labels-per-class", labels_per_class, "labels per class");
  exp_cmd->add_option("--labeled-group", labeled_group, "labeled class group");
  exp_cmd->add_option("--variants", variants_str, "ablation variants");
  exp_cmd->add_option("--setting", setting_str, "ablation setting: labels|mismatch");
  exp_cmd->add_option("--setting-labels", setting_labels, "label count for ablation/labels");
  exp_cmd->add_option("--source-group", source_group, "transfer pretraining class group");
  exp_cmd->add_option("--target-group", target_group, "transfer target class group");
  exp_cmd->add_option("--pretrain-steps", pretrain_steps, "transfer pretraining budget");
  exp_cmd->add_option("--jobs", jobs, "parallel conditions");
  add_common(exp_cmd, true);

  // report
  auto* report_cmd = app.add_subcommand("report", "regenerate CSVs from a report JSON");
  std::string report_in;
  report_cmd->add_option("--in", report_in, "report.json path")->required();
  report_cmd->add_option("--out", out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (synth->parsed())
      return cmd_synth(out_dir, per_class, test_per_class, side, synth_seed);
    if (prepare->parsed())
      return cmd_prepare(dataset_dir, out_dir, config_path, overrides, seed_flag, labels, mismatch,
                         labels_per_class, gamma, labeled_group, do_extend, force);
    if (train_cmd->parsed())
      return cmd_train(config_path, dataset_dir, split_path, out_dir, resume, overrides, seed_flag,
                       force);
    if (eval_cmd->parsed())
      return cmd_evaluate(config_path, dataset_dir, checkpoint, overrides, raw_params);
    if (exp_cmd->parsed())
      return cmd_experiment(kind, config_path, dataset_dir, out_dir, seeds_str, overrides,
                            counts_str, levels_str, gammas_str, labels_per_class, labeled_group,
                            variants_str, setting_str, setting_labels, source_group, target_group,
                            pretrain_steps, jobs, force);
    if (report_cmd->parsed()) return cmd_report(report_in, out_dir);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const RuntimeAbort& e) {
    std::cerr << "abort: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "abort: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}
