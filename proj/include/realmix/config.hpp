#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "realmix/checksum.hpp"
#include "realmix/error.hpp"

namespace realmix {

enum class TsaSchedule { kLinear, kLog, kExp, kNone };

inline const char* to_string(TsaSchedule s) {
  switch (s) {
    case TsaSchedule::kLinear: return "linear";
    case TsaSchedule::kLog: return "log";
    case TsaSchedule::kExp: return "exp";
    case TsaSchedule::kNone: return "none";
  }
  return "linear";
}

inline TsaSchedule tsa_schedule_from_string(const std::string& s) {
  if (s == "linear") return TsaSchedule::kLinear;
  if (s == "log") return TsaSchedule::kLog;
  if (s == "exp") return TsaSchedule::kExp;
  if (s == "none") return TsaSchedule::kNone;
  throw ValidationError("tsa_schedule: unknown schedule '" + s + "' (want linear|log|exp|none)");
}

struct AugmentPolicy {
  bool horizontal_flip = true;
  double flip_prob = 0.5;
  int translate_max = 4;   // pixels, zero-padded shift in [-t, t]
  int cutout_size = 0;     // square side, 0 disables
  double fill_value = 0.0; // cutout fill, mid-gray on the [-1,1] scale

  bool is_identity() const {
    return (!horizontal_flip || flip_prob == 0.0) && translate_max == 0 && cutout_size == 0;
  }

  // Compact canonical form, used in extend-cache keys.
  std::string key_string() const {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "f%g_t%d_c%d_v%g",
                  horizontal_flip ? flip_prob : 0.0, translate_max, cutout_size, fill_value);
    return buf;
  }
};

struct Config {
  // composite-loss hyperparameters
  double alpha = 0.75;                 // MixUp Beta(alpha, alpha)
  double gamma = 0.0;                  // OOD mask fraction in [0,1)
  double lambda_max = 75.0;            // unsupervised weight ceiling
  int64_t lambda_rampup_steps = 16384; // linear ramp length, 0 = no ramp
  double temperature = 0.5;            // sharpening T
  bool tsa_enabled = false;
  TsaSchedule tsa_schedule = TsaSchedule::kLinear;
  bool mixup_enabled = true;           // false = identity mixing
  bool supervised_only = false;        // baseline mode: never touches unlabeled data

  // augmentation
  int extend_copies = 50;
  AugmentPolicy extend_policy{true, 0.5, 4, 8, 0.0};
  AugmentPolicy augment_policy{true, 0.5, 4, 0, 0.0};

  // optimizer / model
  double ema_decay = 0.999;
  int batch_size = 64;
  int unlabeled_batch_size = 0;        // 0 = same as batch_size
  int64_t total_steps = 20000;
  double weight_decay = 4e-5;          // decoupled; default 0.02 * default lr
  double learning_rate = 0.002;
  int model_width = 28;                // channel progression [w, w, 2w, 2w, 4w]

  // data
  int num_classes = 10;
  std::vector<int> class_subset;       // original class ids forming the label space; empty = all
  int64_t seed = 1;

  // harness
  int64_t eval_every = 200;
  int64_t checkpoint_every = 0;        // 0 = final checkpoint only

  int effective_unlabeled_batch() const {
    return unlabeled_batch_size > 0 ? unlabeled_batch_size : batch_size;
  }
};

namespace detail {

inline nlohmann::json policy_to_json(const AugmentPolicy& p) {
  return {{"horizontal_flip", p.horizontal_flip},
          {"flip_prob", p.flip_prob},
          {"translate_max", p.translate_max},
          {"cutout_size", p.cutout_size},
          {"fill_value", p.fill_value}};
}

inline void policy_from_json(const nlohmann::json& j, const std::string& field, AugmentPolicy& p,
                             std::vector<std::string>* warnings) {
  static const std::set<std::string> known = {"horizontal_flip", "flip_prob", "translate_max",
                                              "cutout_size", "fill_value"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key()) && warnings)
      warnings->push_back("unknown key '" + field + "." + it.key() + "' ignored");
  }
  try {
    p.horizontal_flip = j.value("horizontal_flip", p.horizontal_flip);
    p.flip_prob = j.value("flip_prob", p.flip_prob);
    p.translate_max = j.value("translate_max", p.translate_max);
    p.cutout_size = j.value("cutout_size", p.cutout_size);
    p.fill_value = j.value("fill_value", p.fill_value);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config field '" + field + "': " + e.what());
  }
}

}  // namespace detail

inline nlohmann::json config_to_json(const Config& c) {
  nlohmann::json j;
  j["alpha"] = c.alpha;
  j["gamma"] = c.gamma;
  j["lambda_max"] = c.lambda_max;
  j["lambda_rampup_steps"] = c.lambda_rampup_steps;
  j["temperature"] = c.temperature;
  j["tsa_enabled"] = c.tsa_enabled;
  j["tsa_schedule"] = to_string(c.tsa_schedule);
  j["mixup_enabled"] = c.mixup_enabled;
  j["supervised_only"] = c.supervised_only;
  j["extend_copies"] = c.extend_copies;
  j["extend_policy"] = detail::policy_to_json(c.extend_policy);
  j["augment_policy"] = detail::policy_to_json(c.augment_policy);
  j["ema_decay"] = c.ema_decay;
  j["batch_size"] = c.batch_size;
  j["unlabeled_batch_size"] = c.unlabeled_batch_size;
  j["total_steps"] = c.total_steps;
  j["weight_decay"] = c.weight_decay;
  j["learning_rate"] = c.learning_rate;
  j["model_width"] = c.model_width;
  j["num_classes"] = c.num_classes;
  j["class_subset"] = c.class_subset;
  j["seed"] = c.seed;
  j["eval_every"] = c.eval_every;
  j["checkpoint_every"] = c.checkpoint_every;
  return j;
}

inline void validate_config(const Config& c) {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ValidationError("config field '" + field + "': " + why);
  };
  if (!(c.alpha > 0.0)) fail("alpha", "must be > 0");
  if (!(c.gamma >= 0.0 && c.gamma < 1.0)) fail("gamma", "must be in [0, 1)");
  if (!(c.lambda_max >= 0.0)) fail("lambda_max", "must be >= 0");
  if (c.lambda_rampup_steps < 0) fail("lambda_rampup_steps", "must be >= 0");
  if (!(c.temperature > 0.0)) fail("temperature", "must be > 0");
  if (c.extend_copies < 1) fail("extend_copies", "must be >= 1");
  if (!(c.ema_decay >= 0.0 && c.ema_decay <= 1.0)) fail("ema_decay", "must be in [0, 1]");
  if (c.batch_size < 1) fail("batch_size", "must be >= 1");
  if (c.unlabeled_batch_size < 0) fail("unlabeled_batch_size", "must be >= 0");
  if (c.total_steps < 0) fail("total_steps", "must be >= 0");  // 0 = evaluate-only run
  if (!(c.weight_decay >= 0.0)) fail("weight_decay", "must be >= 0");
  if (!(c.learning_rate > 0.0)) fail("learning_rate", "must be > 0");
  if (c.model_width < 1) fail("model_width", "must be >= 1");
  if (c.num_classes < 2) fail("num_classes", "must be >= 2");
  if (c.eval_every < 1) fail("eval_every", "must be >= 1");
  if (c.checkpoint_every < 0) fail("checkpoint_every", "must be >= 0");
  for (const auto* pol : {&c.extend_policy, &c.augment_policy}) {
    const char* name = pol == &c.extend_policy ? "extend_policy" : "augment_policy";
    if (!(pol->flip_prob >= 0.0 && pol->flip_prob <= 1.0))
      fail(std::string(name) + ".flip_prob", "must be in [0, 1]");
    if (pol->translate_max < 0) fail(std::string(name) + ".translate_max", "must be >= 0");
    if (pol->cutout_size < 0) fail(std::string(name) + ".cutout_size", "must be >= 0");
  }
  if (!c.class_subset.empty()) {
    if (static_cast<int>(c.class_subset.size()) != c.num_classes)
      fail("class_subset", "size must equal num_classes");
    std::set<int> uniq(c.class_subset.begin(), c.class_subset.end());
    if (uniq.size() != c.class_subset.size()) fail("class_subset", "entries must be distinct");
    for (int v : c.class_subset)
      if (v < 0) fail("class_subset", "entries must be >= 0");
  }
}

inline Config config_from_json(const nlohmann::json& in, std::vector<std::string>* warnings = nullptr) {
  if (!in.is_object()) throw ValidationError("config: top level must be a JSON object");

  // Dotted keys ("extend_policy.cutout_size") are accepted and expanded so
  // CLI-emitted override files round-trip through the same loader.
  nlohmann::json j = nlohmann::json::object();
  for (auto it = in.begin(); it != in.end(); ++it) {
    auto dot = it.key().find('.');
    if (dot == std::string::npos) {
      j[it.key()] = it.value();
    } else {
      j[it.key().substr(0, dot)][it.key().substr(dot + 1)] = it.value();
    }
  }

  static const std::set<std::string> known = {
      "alpha", "gamma", "lambda_max", "lambda_rampup_steps", "temperature", "tsa_enabled",
      "tsa_schedule", "mixup_enabled", "supervised_only", "extend_copies", "extend_policy",
      "augment_policy", "ema_decay", "batch_size", "unlabeled_batch_size", "total_steps",
      "weight_decay", "learning_rate", "model_width", "num_classes", "class_subset", "seed",
      "eval_every", "checkpoint_every"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key()) && warnings)
      warnings->push_back("unknown key '" + it.key() + "' ignored");
  }

  Config c;
  auto get = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return;
    try {
      dst = j.at(key).get<std::decay_t<decltype(dst)>>();
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("config field '") + key + "': " + e.what());
    }
  };
  get("alpha", c.alpha);
  get("gamma", c.gamma);
  get("lambda_max", c.lambda_max);
  get("lambda_rampup_steps", c.lambda_rampup_steps);
  get("temperature", c.temperature);
  get("tsa_enabled", c.tsa_enabled);
  if (j.contains("tsa_schedule")) {
    if (!j["tsa_schedule"].is_string())
      throw ValidationError("config field 'tsa_schedule': must be a string");
    c.tsa_schedule = tsa_schedule_from_string(j["tsa_schedule"].get<std::string>());
  }
  get("mixup_enabled", c.mixup_enabled);
  get("supervised_only", c.supervised_only);
  get("extend_copies", c.extend_copies);
  if (j.contains("extend_policy"))
    detail::policy_from_json(j["extend_policy"], "extend_policy", c.extend_policy, warnings);
  if (j.contains("augment_policy"))
    detail::policy_from_json(j["augment_policy"], "augment_policy", c.augment_policy, warnings);
  get("ema_decay", c.ema_decay);
  get("batch_size", c.batch_size);
  get("unlabeled_batch_size", c.unlabeled_batch_size);
  get("total_steps", c.total_steps);
  get("weight_decay", c.weight_decay);
  get("learning_rate", c.learning_rate);
  get("model_width", c.model_width);
  get("num_classes", c.num_classes);
  get("class_subset", c.class_subset);
  get("seed", c.seed);
  get("eval_every", c.eval_every);
  get("checkpoint_every", c.checkpoint_every);

  validate_config(c);
  return c;
}

inline Config load_config(const std::string& path, std::vector<std::string>* warnings = nullptr) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("unparsable config file " + path + ": " + e.what());
  }
  return config_from_json(j, warnings);
}

inline void save_config(const Config& c, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for write: " + path);
  f << config_to_json(c).dump(2) << "\n";
}

// Hash of the fully-defaulted canonical form; two files that resolve to the
// same effective configuration hash identically.
inline std::string config_hash(const Config& c) {
  return checksum_hex(fnv1a64(config_to_json(c).dump()));
}

// Dotted-key=value override, e.g. "lambda_max=0" or
// "extend_policy.cutout_size=0". Values parse as JSON scalars/arrays;
// bare words fall back to strings (for tsa_schedule=log).
inline void apply_override(Config& c, const std::string& kv) {
  auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ValidationError("override must be key=value: '" + kv + "'");
  std::string key = kv.substr(0, eq);
  std::string raw = kv.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;  // unquoted string

  nlohmann::json j = config_to_json(c);
  auto dot = key.find('.');
  if (dot == std::string::npos) {
    if (!j.contains(key)) throw ValidationError("override: unknown config key '" + key + "'");
    j[key] = value;
  } else {
    std::string outer = key.substr(0, dot), inner = key.substr(dot + 1);
    if (!j.contains(outer) || !j[outer].is_object() || !j[outer].contains(inner))
      throw ValidationError("override: unknown config key '" + key + "'");
    j[outer][inner] = value;
  }
  c = config_from_json(j);
}

}  // namespace realmix
