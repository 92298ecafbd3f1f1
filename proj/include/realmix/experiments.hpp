#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "realmix/config.hpp"
#include "realmix/dataset.hpp"
#include "realmix/splits.hpp"
#include "realmix/train.hpp"

namespace realmix {

// ---------------------------------------------------------------------------
struct Condition {
  std::string name;            // e.g. "realmix/n=250"
  double x = 0.0;              // plot coordinate (label count, mismatch level, arm index)
  nlohmann::json params;       // the declared delta for this arm
  std::vector<int64_t> seeds;
  std::vector<double> errors;  // per-seed final EMA test error
  double mean = 0.0;
  std::optional<double> stddev;  // only reported with >= 2 seeds

  void finalize() {
    mean = 0.0;
    for (double e : errors) mean += e;
    if (!errors.empty()) mean /= static_cast<double>(errors.size());
    if (errors.size() >= 2) {
      double ss = 0.0;
      for (double e : errors) ss += (e - mean) * (e - mean);
      stddev = std::sqrt(ss / static_cast<double>(errors.size() - 1));
    } else {
      stddev.reset();
    }
  }

  bool operator==(const Condition& o) const {
    return name == o.name && x == o.x && params == o.params && seeds == o.seeds &&
           errors == o.errors && mean == o.mean && stddev == o.stddev;
  }
};

struct ExperimentReport {
  std::string kind;  // labels | mismatch | ablation | transfer
  std::vector<Condition> conditions;
  std::optional<double> baseline_error;
  std::string config_hash;
  std::vector<int64_t> seeds;
  std::string dataset_checksum;
  double wall_clock_seconds = 0.0;

  const Condition* find(const std::string& name) const {
    for (const auto& c : conditions)
      if (c.name == name) return &c;
    return nullptr;
  }

  bool operator==(const ExperimentReport& o) const {
    return kind == o.kind && conditions == o.conditions && baseline_error == o.baseline_error &&
           config_hash == o.config_hash && seeds == o.seeds &&
           dataset_checksum == o.dataset_checksum && wall_clock_seconds == o.wall_clock_seconds;
  }
};

// ---------------------------------------------------------------------------
// Bounded-parallel task runner. Conditions within a sweep are independent
// (each task owns its model, RNG, and splits), so results do not depend on
// the job count; the first exception wins and is rethrown after join.
inline void run_parallel(std::vector<std::function<void()>>& tasks, int jobs) {
  if (jobs <= 1) {
    for (auto& t : tasks) t();
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr first_error;
  std::mutex err_mu;
  auto worker = [&] {
    for (;;) {
      const size_t k = next.fetch_add(1);
      if (k >= tasks.size()) break;
      try {
        tasks[k]();
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const int n = std::min<int>(jobs, static_cast<int>(tasks.size()));
  pool.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

namespace detail {

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

inline TrainResult run_arm(const Config& cfg, const DatasetBundle& data, const SplitSpec& split) {
  TrainResult r = train(cfg, data.train, split, data.test);
  if (cfg.supervised_only && r.unlabeled_batches_seen != 0)
    throw RuntimeAbort("baseline arm touched unlabeled data (instrumentation violation)");
  return r;
}

// Labeled picks per class from `classes`, the rest of those classes as the
// unlabeled pool (the 0%-mismatch shape used by the transfer protocol).
inline SplitSpec make_subset_split(const Dataset& d, const std::vector<int>& classes,
                                   int per_class, int64_t seed) {
  auto by_class = indices_by_class(d);
  RngStream stream(static_cast<uint64_t>(seed), streams::kSplit);
  SplitSpec spec;
  spec.seed = seed;
  spec.source_checksum = dataset_checksum(d);
  for (int c : classes) {
    auto idx = by_class[static_cast<size_t>(c)];
    if (static_cast<int>(idx.size()) < per_class)
      throw ValidationError("transfer split: class " + std::to_string(c) + " too small");
    Rng rng = stream.at(1, static_cast<uint64_t>(c));
    rng.shuffle(idx);
    for (size_t i = 0; i < idx.size(); ++i)
      (static_cast<int>(i) < per_class ? spec.labeled_indices : spec.unlabeled_indices)
          .push_back(idx[i]);
  }
  std::sort(spec.labeled_indices.begin(), spec.labeled_indices.end());
  std::sort(spec.unlabeled_indices.begin(), spec.unlabeled_indices.end());
  return spec;
}

// All samples of `classes` labeled; no unlabeled pool (pretraining stage).
inline SplitSpec make_all_labeled_split(const Dataset& d, const std::vector<int>& classes,
                                        int64_t seed) {
  SplitSpec spec;
  spec.seed = seed;
  spec.source_checksum = dataset_checksum(d);
  std::set<int> wanted(classes.begin(), classes.end());
  for (int i = 0; i < d.size(); ++i)
    if (wanted.count(d.labels[static_cast<size_t>(i)])) spec.labeled_indices.push_back(i);
  return spec;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Label-count sweep: RealMix vs a labeled-only arm at each count (paired
// splits per seed), plus a fully-supervised reference trained on every label.
inline ExperimentReport run_label_sweep(const Config& base, const std::vector<int>& label_counts,
                                        const std::vector<int64_t>& seeds,
                                        const DatasetBundle& data, int jobs = 1) {
  if (label_counts.empty()) throw ValidationError("run_label_sweep: no label counts");
  if (seeds.empty()) throw ValidationError("run_label_sweep: no seeds");
  detail::Timer timer;

  ExperimentReport report;
  report.kind = "labels";
  report.config_hash = config_hash(base);
  report.seeds = seeds;
  report.dataset_checksum = dataset_checksum(data.train);

  struct Cell {
    double error = 0.0;
  };
  std::map<std::string, std::map<int64_t, Cell>> results;
  std::vector<std::function<void()>> tasks;
  std::mutex mu;

  auto add_task = [&](const std::string& cond, int64_t seed, Config cfg, int n_labels) {
    tasks.push_back([&, cond, seed, cfg, n_labels] {
      SplitSpec split = make_label_split(data.train, n_labels, seed);
      TrainResult r = detail::run_arm(cfg, data, split);
      std::lock_guard<std::mutex> lock(mu);
      results[cond][seed] = {r.final_test_error_ema};
    });
  };

  for (int count : label_counts) {
    for (int64_t seed : seeds) {
      Config ssl = base;
      ssl.seed = seed;
      ssl.supervised_only = false;
      add_task("realmix/n=" + std::to_string(count), seed, ssl, count);
      Config sup = base;
      sup.seed = seed;
      sup.supervised_only = true;
      add_task("labeled_only/n=" + std::to_string(count), seed, sup, count);
    }
  }
  for (int64_t seed : seeds) {
    Config full = base;
    full.seed = seed;
    full.supervised_only = true;
    add_task("fully_supervised", seed, full, data.train.size());
  }
  run_parallel(tasks, jobs);

  auto emit = [&](const std::string& cond, double x, nlohmann::json params) {
    Condition c;
    c.name = cond;
    c.x = x;
    c.params = std::move(params);
    for (int64_t seed : seeds) {
      c.seeds.push_back(seed);
      c.errors.push_back(results.at(cond).at(seed).error);
    }
    c.finalize();
    report.conditions.push_back(std::move(c));
  };
  for (int count : label_counts) {
    emit("realmix/n=" + std::to_string(count), count, {{"n_labels", count}, {"method", "realmix"}});
    emit("labeled_only/n=" + std::to_string(count), count,
         {{"n_labels", count}, {"method", "labeled_only"}});
  }
  emit("fully_supervised", data.train.size(),
       {{"n_labels", data.train.size()}, {"method", "fully_supervised"}});
  report.baseline_error = report.conditions.back().mean;
  report.wall_clock_seconds = timer.seconds();
  return report;
}

// ---------------------------------------------------------------------------
// Mismatch sweep: per level, build the mismatch split, take gamma from the
// level map, train, evaluate; plus one labeled-only baseline (the labeled
// set is level-independent by construction).
inline ExperimentReport run_mismatch_sweep(const Config& base, const std::vector<int>& levels,
                                           const std::map<int, double>& gamma_by_level,
                                           const std::vector<int64_t>& seeds,
                                           const DatasetBundle& data,
                                           const std::vector<int>& labeled_classes,
                                           int labels_per_class, int jobs = 1) {
  if (levels.empty()) throw ValidationError("run_mismatch_sweep: no levels");
  if (seeds.empty()) throw ValidationError("run_mismatch_sweep: no seeds");
  for (int level : levels)
    if (!gamma_by_level.count(level))
      throw ValidationError("run_mismatch_sweep: no gamma configured for level " +
                            std::to_string(level));
  detail::Timer timer;

  Config tmpl = base;
  tmpl.class_subset = labeled_classes;
  tmpl.num_classes = static_cast<int>(labeled_classes.size());

  ExperimentReport report;
  report.kind = "mismatch";
  report.config_hash = config_hash(tmpl);
  report.seeds = seeds;
  report.dataset_checksum = dataset_checksum(data.train);

  std::map<std::string, std::map<int64_t, double>> results;
  std::vector<std::function<void()>> tasks;
  std::mutex mu;

  for (int level : levels) {
    for (int64_t seed : seeds) {
      Config cfg = tmpl;
      cfg.seed = seed;
      cfg.gamma = gamma_by_level.at(level);
      cfg.supervised_only = false;
      std::string cond = "realmix/mismatch=" + std::to_string(level);
      tasks.push_back([&, cond, seed, cfg, level] {
        SplitSpec split = make_mismatch_split(data.train, labeled_classes, labels_per_class,
                                              level, seed);
        TrainResult r = detail::run_arm(cfg, data, split);
        std::lock_guard<std::mutex> lock(mu);
        results[cond][seed] = r.final_test_error_ema;
      });
    }
  }
  for (int64_t seed : seeds) {
    Config cfg = tmpl;
    cfg.seed = seed;
    cfg.supervised_only = true;
    tasks.push_back([&, seed, cfg] {
      SplitSpec split = make_mismatch_split(data.train, labeled_classes, labels_per_class,
                                            levels.front(), seed);
      TrainResult r = detail::run_arm(cfg, data, split);
      std::lock_guard<std::mutex> lock(mu);
      results["labeled_only"][seed] = r.final_test_error_ema;
    });
  }
  run_parallel(tasks, jobs);

  for (int level : levels) {
    Condition c;
    c.name = "realmix/mismatch=" + std::to_string(level);
    c.x = level;
    c.params = {{"mismatch_pct", level}, {"gamma", gamma_by_level.at(level)}, {"method", "realmix"}};
    for (int64_t seed : seeds) {
      c.seeds.push_back(seed);
      c.errors.push_back(results.at(c.name).at(seed));
    }
    c.finalize();
    report.conditions.push_back(std::move(c));
  }
  {
    Condition c;
    c.name = "labeled_only";
    c.x = -1;
    c.params = {{"method", "labeled_only"}};
    for (int64_t seed : seeds) {
      c.seeds.push_back(seed);
      c.errors.push_back(results.at("labeled_only").at(seed));
    }
    c.finalize();
    report.baseline_error = c.mean;
    report.conditions.push_back(std::move(c));
  }
  report.wall_clock_seconds = timer.seconds();
  return report;
}

// ---------------------------------------------------------------------------
// Ablations: named config deltas trained under the same splits and seeds as
// an unmodified control arm.
struct AblationSetting {
  enum class Kind { kLabels, kMismatch } kind = Kind::kLabels;
  int n_labels = 250;
  int mismatch_pct = 75;
  int labels_per_class = 40;
  std::vector<int> labeled_classes;  // used by kMismatch
};

using VariantList = std::vector<std::pair<std::string, std::vector<std::string>>>;

inline ExperimentReport run_ablation(const Config& base, const AblationSetting& setting,
                                     const VariantList& variants,
                                     const std::vector<int64_t>& seeds, const DatasetBundle& data,
                                     int jobs = 1) {
  if (seeds.empty()) throw ValidationError("run_ablation: no seeds");
  detail::Timer timer;

  Config tmpl = base;
  if (setting.kind == AblationSetting::Kind::kMismatch) {
    tmpl.class_subset = setting.labeled_classes;
    tmpl.num_classes = static_cast<int>(setting.labeled_classes.size());
  }

  ExperimentReport report;
  report.kind = "ablation";
  report.config_hash = config_hash(tmpl);
  report.seeds = seeds;
  report.dataset_checksum = dataset_checksum(data.train);

  VariantList arms;
  arms.emplace_back("control", std::vector<std::string>{});
  arms.insert(arms.end(), variants.begin(), variants.end());

  std::map<std::string, std::map<int64_t, double>> results;
  std::vector<std::function<void()>> tasks;
  std::mutex mu;

  for (const auto& [name, overrides] : arms) {
    for (int64_t seed : seeds) {
      Config cfg = tmpl;
      cfg.seed = seed;
      for (const auto& kv : overrides) apply_override(cfg, kv);
      if (setting.kind == AblationSetting::Kind::kMismatch) {
        // the delta may not change the experiment's class structure
        cfg.class_subset = tmpl.class_subset;
        cfg.num_classes = tmpl.num_classes;
      }
      std::string cond = name;
      tasks.push_back([&, cond, seed, cfg] {
        SplitSpec split =
            setting.kind == AblationSetting::Kind::kLabels
                ? make_label_split(data.train, setting.n_labels, seed)
                : make_mismatch_split(data.train, setting.labeled_classes,
                                      setting.labels_per_class, setting.mismatch_pct, seed);
        TrainResult r = detail::run_arm(cfg, data, split);
        std::lock_guard<std::mutex> lock(mu);
        results[cond][seed] = r.final_test_error_ema;
      });
    }
  }
  run_parallel(tasks, jobs);

  double arm_index = 0.0;
  for (const auto& [name, overrides] : arms) {
    Condition c;
    c.name = name;
    c.x = arm_index++;
    c.params = {{"overrides", overrides}};
    for (int64_t seed : seeds) {
      c.seeds.push_back(seed);
      c.errors.push_back(results.at(name).at(seed));
    }
    c.finalize();
    report.conditions.push_back(std::move(c));
  }
  report.baseline_error = report.conditions.front().mean;  // control
  report.wall_clock_seconds = timer.seconds();
  return report;
}

// ---------------------------------------------------------------------------
// Transfer protocol, source-split analog: (a) supervised pretraining on the
// source classes, (b) fine-tune on target labels only, (c) RealMix from
// scratch, (d) RealMix from the pretrained trunk. Arms b/c/d share the seed's
// target split; b and d share the seed's pretrained trunk.
struct TransferSpec {
  std::vector<int> source_classes;
  std::vector<int> target_classes;
  int target_labels_per_class = 25;
  int64_t pretrain_steps = 2000;
};

inline ExperimentReport run_transfer(const Config& base, const TransferSpec& spec,
                                     const std::vector<int64_t>& seeds, const DatasetBundle& data,
                                     int jobs = 1) {
  if (seeds.empty()) throw ValidationError("run_transfer: no seeds");
  for (int c : spec.source_classes)
    for (int t : spec.target_classes)
      if (c == t) throw ValidationError("run_transfer: source and target classes overlap");
  detail::Timer timer;

  ExperimentReport report;
  report.kind = "transfer";
  report.config_hash = config_hash(base);
  report.seeds = seeds;
  report.dataset_checksum = dataset_checksum(data.train);

  struct SeedRow {
    double pretrain = 0.0, finetune = 0.0, scratch = 0.0, pretrained = 0.0;
  };
  std::map<int64_t, SeedRow> rows;
  std::vector<std::function<void()>> tasks;
  std::mutex mu;

  for (int64_t seed : seeds) {
    tasks.push_back([&, seed] {
      SeedRow row;

      Config pre_cfg = base;
      pre_cfg.seed = seed;
      pre_cfg.supervised_only = true;
      pre_cfg.class_subset = spec.source_classes;
      pre_cfg.num_classes = static_cast<int>(spec.source_classes.size());
      pre_cfg.total_steps = spec.pretrain_steps;
      pre_cfg.tsa_enabled = false;
      SplitSpec pre_split = detail::make_all_labeled_split(data.train, spec.source_classes, seed);
      Trainer pretrainer(pre_cfg, data.train, pre_split, data.test);
      TrainResult pre = pretrainer.run();
      row.pretrain = pre.final_test_error_ema;
      ParamSet trunk = pretrainer.state().model->params();

      SplitSpec tgt_split = detail::make_subset_split(data.train, spec.target_classes,
                                                      spec.target_labels_per_class, seed);

      Config ft_cfg = base;
      ft_cfg.seed = seed;
      ft_cfg.supervised_only = true;
      ft_cfg.class_subset = spec.target_classes;
      ft_cfg.num_classes = static_cast<int>(spec.target_classes.size());
      {
        Trainer t(ft_cfg, data.train, tgt_split, data.test);
        t.init_trunk_from(trunk);
        row.finetune = t.run().final_test_error_ema;
      }

      Config ssl_cfg = base;
      ssl_cfg.seed = seed;
      ssl_cfg.supervised_only = false;
      ssl_cfg.class_subset = spec.target_classes;
      ssl_cfg.num_classes = static_cast<int>(spec.target_classes.size());
      {
        Trainer t(ssl_cfg, data.train, tgt_split, data.test);
        row.scratch = t.run().final_test_error_ema;
      }
      {
        Trainer t(ssl_cfg, data.train, tgt_split, data.test);
        t.init_trunk_from(trunk);
        row.pretrained = t.run().final_test_error_ema;
      }

      std::lock_guard<std::mutex> lock(mu);
      rows[seed] = row;
    });
  }
  run_parallel(tasks, jobs);

  auto emit = [&](const std::string& name, double x, auto getter) {
    Condition c;
    c.name = name;
    c.x = x;
    c.params = {{"arm", name}};
    for (int64_t seed : seeds) {
      c.seeds.push_back(seed);
      c.errors.push_back(getter(rows.at(seed)));
    }
    c.finalize();
    report.conditions.push_back(std::move(c));
  };
  emit("pretrain_source", 0, [](const SeedRow& r) { return r.pretrain; });
  emit("finetune", 1, [](const SeedRow& r) { return r.finetune; });
  emit("realmix_scratch", 2, [](const SeedRow& r) { return r.scratch; });
  emit("realmix_pretrained", 3, [](const SeedRow& r) { return r.pretrained; });
  report.baseline_error = report.find("finetune")->mean;
  report.wall_clock_seconds = timer.seconds();
  return report;
}

// ---------------------------------------------------------------------------
// Report serialization: versioned JSON plus two fixed-column CSVs
// (summary.csv: condition,x,n_seeds,mean_error,std_error;
//  series.csv:  condition,x,mean,std  — plot-ready).
inline nlohmann::json report_to_json(const ExperimentReport& r) {
  nlohmann::json j;
  j["format"] = "realmix-report/v1";
  j["kind"] = r.kind;
  j["seeds"] = r.seeds;
  j["config_hash"] = r.config_hash;
  j["dataset_checksum"] = r.dataset_checksum;
  j["wall_clock_seconds"] = r.wall_clock_seconds;
  if (r.baseline_error) j["baseline_error"] = *r.baseline_error;
  else j["baseline_error"] = nullptr;
  j["conditions"] = nlohmann::json::array();
  for (const auto& c : r.conditions) {
    nlohmann::json jc;
    jc["name"] = c.name;
    jc["x"] = c.x;
    jc["params"] = c.params;
    jc["seeds"] = c.seeds;
    jc["errors"] = c.errors;
    jc["mean"] = c.mean;
    if (c.stddev) jc["std"] = *c.stddev;
    else jc["std"] = nullptr;
    j["conditions"].push_back(std::move(jc));
  }
  return j;
}

inline ExperimentReport report_from_json(const nlohmann::json& j) {
  ExperimentReport r;
  r.kind = j.at("kind").get<std::string>();
  r.seeds = j.at("seeds").get<std::vector<int64_t>>();
  r.config_hash = j.value("config_hash", "");
  r.dataset_checksum = j.value("dataset_checksum", "");
  r.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
  if (j.contains("baseline_error") && !j["baseline_error"].is_null())
    r.baseline_error = j["baseline_error"].get<double>();
  for (const auto& jc : j.at("conditions")) {
    Condition c;
    c.name = jc.at("name").get<std::string>();
    c.x = jc.at("x").get<double>();
    c.params = jc.value("params", nlohmann::json::object());
    c.seeds = jc.at("seeds").get<std::vector<int64_t>>();
    c.errors = jc.at("errors").get<std::vector<double>>();
    c.mean = jc.at("mean").get<double>();
    if (jc.contains("std") && !jc["std"].is_null()) c.stddev = jc["std"].get<double>();
    r.conditions.push_back(std::move(c));
  }
  return r;
}

inline void emit_report(const ExperimentReport& r, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  {
    std::ofstream f(fs::path(out_dir) / "report.json", std::ios::trunc);
    if (!f) throw IoError("cannot write report.json in " + out_dir);
    f << report_to_json(r).dump(2) << "\n";
  }
  auto fmt = [](double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return std::string(buf);
  };
  {
    std::ofstream f(fs::path(out_dir) / "summary.csv", std::ios::trunc);
    if (!f) throw IoError("cannot write summary.csv in " + out_dir);
    f << "condition,x,n_seeds,mean_error,std_error\n";
    for (const auto& c : r.conditions)
      f << c.name << "," << fmt(c.x) << "," << c.seeds.size() << "," << fmt(c.mean) << ","
        << (c.stddev ? fmt(*c.stddev) : "") << "\n";
  }
  {
    std::ofstream f(fs::path(out_dir) / "series.csv", std::ios::trunc);
    if (!f) throw IoError("cannot write series.csv in " + out_dir);
    f << "condition,x,mean,std\n";
    for (const auto& c : r.conditions)
      f << c.name << "," << fmt(c.x) << "," << fmt(c.mean) << ","
        << (c.stddev ? fmt(*c.stddev) : "") << "\n";
  }
}

inline ExperimentReport load_report(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open report: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("unparsable report " + path + ": " + e.what());
  }
  return report_from_json(j);
}

}  // namespace realmix
