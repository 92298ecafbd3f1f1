#pragma once

#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "realmix/augment.hpp"
#include "realmix/config.hpp"
#include "realmix/dataset.hpp"
#include "realmix/nn.hpp"
#include "realmix/optim.hpp"
#include "realmix/splits.hpp"
#include "realmix/ssl.hpp"

namespace realmix {

struct StepMetrics {
  double sup_loss = 0.0;
  double unsup_loss = 0.0;
  double total_loss = 0.0;
  double tsa_threshold = 1.0;
  double ood_kept_fraction = 1.0;
  double lambda_t = 0.0;
};

// Mutable training state: classifier parameters, EMA shadow, optimizer
// moments, and the completed-step counter. All RNG is keyed by step, so no
// cursors live here.
struct TrainState {
  std::unique_ptr<SmallConvNet> model;
  ParamSet ema;
  AdamW opt{0.001, 0.0};
  int64_t step = 0;
  std::string config_hash;
  int64_t unlabeled_batches_seen = 0;  // instrumentation: baselines must stay at 0
};

// ---------------------------------------------------------------------------
// Pure seeded batch sampler: the pool is reshuffled once per pass and batches
// are consecutive slices of the concatenated permutations, so the index list
// for any step is a function of (pool size, batch, step, stream) alone.
class EpochSampler {
public:
  EpochSampler(int pool_size, int batch, RngStream stream)
      : pool_(pool_size), batch_(batch), stream_(stream) {
    if (pool_size < 1) throw ValidationError("sampler: empty pool");
    if (batch < 1) throw ValidationError("sampler: batch must be >= 1");
  }

  std::vector<int> batch_at(int64_t step) const {
    std::vector<int> out(static_cast<size_t>(batch_));
    const int64_t g0 = step * batch_;
    for (int j = 0; j < batch_; ++j) {
      const int64_t g = g0 + j;
      const int64_t pass = g / pool_;
      const int64_t pos = g % pool_;
      out[static_cast<size_t>(j)] = perm_for_pass(pass)[static_cast<size_t>(pos)];
    }
    return out;
  }

private:
  const std::vector<int>& perm_for_pass(int64_t pass) const {
    auto it = cache_.find(pass);
    if (it != cache_.end()) return it->second;
    if (cache_.size() > 4) cache_.clear();
    std::vector<int> perm(static_cast<size_t>(pool_));
    for (int i = 0; i < pool_; ++i) perm[static_cast<size_t>(i)] = i;
    Rng rng = stream_.at(static_cast<uint64_t>(pass));
    rng.shuffle(perm);
    return cache_.emplace(pass, std::move(perm)).first->second;
  }

  int pool_;
  int batch_;
  RngStream stream_;
  mutable std::map<int64_t, std::vector<int>> cache_;
};

// ---------------------------------------------------------------------------
// One fully-assembled step batch: augmented + mixed inputs with soft targets,
// plus the pre-mix metadata the masks need. Targets are constants here; the
// classifier forwards that produced them carry no gradient.
struct ComposedBatch {
  ImageBatch sup_inputs;
  Matrix sup_targets;             // soft labels after mixing
  std::vector<int> sup_labels;    // original class ids (TSA confidence lookup)
  ImageBatch unsup_inputs;
  Matrix unsup_targets;
  std::vector<double> unsup_confidence;  // max of each sharpened pre-mix target
};

// The unlabeled pool the sampler draws from: split's unlabeled images run
// through Extend once (Algorithm 1 places this outside the step loop).
inline UnlabeledBatch build_extended_pool(const Dataset& train_data, const SplitSpec& split,
                                          const Config& cfg, const std::string& cache_dir = "") {
  UnlabeledBatch raw(0, train_data.images.c, train_data.images.h, train_data.images.w);
  raw.data.clear();
  for (int idx : split.unlabeled_indices) raw.push_image(train_data.images.image(idx));
  if (raw.n == 0) throw ValidationError("train: SSL run requires unlabeled data");
  if (!cache_dir.empty())
    return extend_cached(raw, cfg.extend_copies, cfg.extend_policy, cfg.seed, cache_dir);
  return extend(raw, cfg.extend_copies, cfg.extend_policy,
                RngStream(static_cast<uint64_t>(cfg.seed), streams::kExtend));
}

inline Matrix one_hot_rows(std::span<const int> labels, int k) {
  Matrix m(static_cast<int>(labels.size()), k);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= k) throw ValidationError("label out of range [0, K)");
    m.at(static_cast<int>(i), labels[i]) = 1.0;
  }
  return m;
}

// Algorithm steps up to (and including) MixUp: augment the labeled batch,
// generate sharpened targets for two augmentations of each unlabeled sample,
// then mix both collections against a shuffled union of everything. With
// mixup disabled the union step is skipped (identity mixing).
inline ComposedBatch compose_training_batch(Classifier& model, const LabeledBatch& labeled,
                                            const UnlabeledBatch& unlabeled, const Config& cfg,
                                            int64_t step) {
  const uint64_t seed = static_cast<uint64_t>(cfg.seed);
  const uint64_t ustep = static_cast<uint64_t>(step);
  const int k = model.num_classes();

  ComposedBatch out;
  out.sup_labels = labeled.labels;

  // Augment(x) on the labeled batch
  RngStream lab_aug(seed, streams::kLabeledAug);
  ImageBatch aug_l(labeled.images.n, labeled.images.c, labeled.images.h, labeled.images.w);
  for (int i = 0; i < labeled.images.n; ++i) {
    Rng rng = lab_aug.at(ustep, static_cast<uint64_t>(i));
    augment_image(labeled.images.image(i), aug_l.image(i), labeled.images.c, labeled.images.h,
                  labeled.images.w, cfg.augment_policy, rng);
  }
  Matrix y_l = one_hot_rows(labeled.labels, k);

  if (cfg.supervised_only) {
    out.sup_inputs = std::move(aug_l);
    out.sup_targets = std::move(y_l);
    return out;
  }

  // generateTargets on the unlabeled batch
  RngStream tgt_aug(seed, streams::kTargetAug);
  GeneratedTargets gen =
      generate_targets(model, unlabeled, cfg.augment_policy, cfg.temperature, tgt_aug, ustep);
  const int nu = gen.inputs.n;  // 2x the unlabeled batch
  out.unsup_confidence.resize(static_cast<size_t>(nu));
  for (int i = 0; i < nu; ++i) {
    auto row = gen.targets.row(i);
    out.unsup_confidence[static_cast<size_t>(i)] = *std::max_element(row.begin(), row.end());
  }

  if (!cfg.mixup_enabled) {
    out.sup_inputs = std::move(aug_l);
    out.sup_targets = std::move(y_l);
    out.unsup_inputs = std::move(gen.inputs);
    out.unsup_targets = std::move(gen.targets);
    return out;
  }

  // Union, shuffled with a dedicated stream, then MixUp against it:
  // labeled rows pair with the first |L| union entries, unlabeled rows with
  // the rest (so every union element partners exactly once).
  const int nl = aug_l.n;
  const int ntot = nl + nu;
  std::vector<int> perm(static_cast<size_t>(ntot));
  for (int i = 0; i < ntot; ++i) perm[static_cast<size_t>(i)] = i;
  RngStream mix(seed, streams::kMixup);
  Rng perm_rng = mix.at(ustep, 0xffffffffull);
  perm_rng.shuffle(perm);

  auto union_image = [&](int idx) {
    return idx < nl ? aug_l.image(idx) : gen.inputs.image(idx - nl);
  };
  auto union_target = [&](int idx) {
    return idx < nl ? y_l.row(idx) : gen.targets.row(idx - nl);
  };

  out.sup_inputs = ImageBatch(nl, aug_l.c, aug_l.h, aug_l.w);
  out.sup_targets = Matrix(nl, k);
  for (int i = 0; i < nl; ++i) {
    Rng rng = mix.at(ustep, static_cast<uint64_t>(i));
    const double w = draw_mixup_weight(cfg.alpha, rng);
    const int partner = perm[static_cast<size_t>(i)];
    mix_images(aug_l.image(i), union_image(partner), w, out.sup_inputs.image(i));
    mix_probs(y_l.row(i), union_target(partner), w, out.sup_targets.row(i));
  }

  out.unsup_inputs = ImageBatch(nu, gen.inputs.c, gen.inputs.h, gen.inputs.w);
  out.unsup_targets = Matrix(nu, k);
  for (int i = 0; i < nu; ++i) {
    Rng rng = mix.at(ustep, static_cast<uint64_t>(nl + i));
    const double w = draw_mixup_weight(cfg.alpha, rng);
    const int partner = perm[static_cast<size_t>(nl + i)];
    mix_images(gen.inputs.image(i), union_image(partner), w, out.unsup_inputs.image(i));
    mix_probs(gen.targets.row(i), union_target(partner), w, out.unsup_targets.row(i));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Composite loss (Eq. 2 shape), split into the two halves so the training
// loop can interleave them with the model's forward/backward cache. The
// unsupervised mean is over all rows (masked rows contribute zero) so lambda
// keeps its meaning across gamma values; the TSA-masked supervised mean is
// over kept rows only.
struct SupLossPart {
  double mean = 0.0;
  double tsa_thr = 1.0;
  Matrix dprobs;
};

inline SupLossPart supervised_loss_part(const Matrix& sup_probs, const Matrix& targets,
                                        std::span<const int> labels, const Config& cfg,
                                        int64_t step) {
  SupLossPart out;
  const int k = sup_probs.cols;
  PerSampleLoss ce = supervised_loss(sup_probs, targets);
  out.mean = ce.mean;
  std::vector<char> kept(static_cast<size_t>(sup_probs.rows), 1);
  int kept_n = sup_probs.rows;
  if (cfg.tsa_enabled && cfg.tsa_schedule != TsaSchedule::kNone && !cfg.supervised_only) {
    TsaState ts{step, cfg.total_steps, cfg.tsa_schedule, k};
    out.tsa_thr = tsa_threshold(ts);
    TsaMaskResult m = tsa_mask(ce.per_sample, sup_probs, labels, out.tsa_thr);
    out.mean = m.mean;
    kept = m.kept;
    kept_n = m.num_kept;
  }
  out.dprobs = Matrix(sup_probs.rows, k);
  if (kept_n > 0) {
    const double scale = 1.0 / kept_n;
    for (int i = 0; i < sup_probs.rows; ++i) {
      if (!kept[static_cast<size_t>(i)]) continue;
      for (int c = 0; c < k; ++c) {
        const double p = sup_probs.at(i, c);
        if (p >= kLogEps) out.dprobs.at(i, c) = -scale * targets.at(i, c) / p;
      }
    }
  }
  return out;
}

struct UnsupLossPart {
  double mean = 0.0;
  double kept_fraction = 1.0;
  Matrix dprobs;  // already scaled by lambda_t
};

inline UnsupLossPart unsupervised_loss_part(const Matrix& unsup_probs, const Matrix& targets,
                                            std::span<const double> confidences, double gamma,
                                            double lambda_t) {
  UnsupLossPart out;
  const int n = unsup_probs.rows;
  const int k = unsup_probs.cols;
  std::vector<double> mse = unsupervised_loss(unsup_probs, targets);
  OodMaskResult mask = ood_mask(mse, confidences, gamma);
  for (double v : mask.masked_losses) out.mean += v;
  if (n > 0) out.mean /= n;
  out.kept_fraction = n > 0 ? static_cast<double>(n - mask.num_masked) / n : 1.0;
  out.dprobs = Matrix(n, k);
  if (lambda_t > 0.0) {
    const double scale = lambda_t * 2.0 / (static_cast<double>(n) * k);
    for (int i = 0; i < n; ++i) {
      if (!mask.kept[static_cast<size_t>(i)]) continue;
      for (int c = 0; c < k; ++c)
        out.dprobs.at(i, c) = scale * (unsup_probs.at(i, c) - targets.at(i, c));
    }
  }
  return out;
}

// Whole composite loss from precomputed probability matrices; used directly
// by the finite-difference gradient checks, where the composed batch (and
// with it every target) is held fixed.
struct CompositeLoss {
  StepMetrics metrics;
  Matrix dsup;
  Matrix dunsup;
};

inline CompositeLoss composite_loss(const Matrix& sup_probs, const Matrix& unsup_probs,
                                    const ComposedBatch& batch, const Config& cfg, int64_t step) {
  CompositeLoss out;
  SupLossPart sup = supervised_loss_part(sup_probs, batch.sup_targets, batch.sup_labels, cfg, step);
  const double lambda_t =
      cfg.supervised_only ? 0.0 : lambda_at(step, cfg.lambda_max, cfg.lambda_rampup_steps);
  out.metrics.sup_loss = sup.mean;
  out.metrics.tsa_threshold = sup.tsa_thr;
  out.metrics.lambda_t = lambda_t;
  out.dsup = std::move(sup.dprobs);
  if (unsup_probs.rows > 0) {
    UnsupLossPart uns = unsupervised_loss_part(unsup_probs, batch.unsup_targets,
                                               batch.unsup_confidence, cfg.gamma, lambda_t);
    out.metrics.unsup_loss = uns.mean;
    out.metrics.ood_kept_fraction = uns.kept_fraction;
    out.dunsup = std::move(uns.dprobs);
  }
  out.metrics.total_loss = total_loss(out.metrics.sup_loss, out.metrics.unsup_loss, lambda_t);
  return out;
}

// ---------------------------------------------------------------------------
// One Algorithm-1 step: compose, forward/backward the supervised half, then
// the unsupervised half (the model caches one forward at a time), optimizer
// update with decoupled weight decay, EMA update, step++.
inline StepMetrics train_step(TrainState& state, const LabeledBatch& labeled,
                              const UnlabeledBatch& unlabeled, const Config& cfg) {
  SmallConvNet& model = *state.model;
  ComposedBatch batch = compose_training_batch(model, labeled, unlabeled, cfg, state.step);
  if (!cfg.supervised_only) ++state.unlabeled_batches_seen;

  StepMetrics metrics;
  const double lambda_t =
      cfg.supervised_only ? 0.0 : lambda_at(state.step, cfg.lambda_max, cfg.lambda_rampup_steps);
  metrics.lambda_t = lambda_t;

  model.zero_grad();
  Matrix sup_probs = model.forward(batch.sup_inputs, /*train_mode=*/true);
  SupLossPart sup =
      supervised_loss_part(sup_probs, batch.sup_targets, batch.sup_labels, cfg, state.step);
  model.backward(sup.dprobs);
  metrics.sup_loss = sup.mean;
  metrics.tsa_threshold = sup.tsa_thr;

  if (batch.unsup_inputs.n > 0) {
    Matrix unsup_probs = model.forward(batch.unsup_inputs, /*train_mode=*/true);
    UnsupLossPart uns = unsupervised_loss_part(unsup_probs, batch.unsup_targets,
                                               batch.unsup_confidence, cfg.gamma, lambda_t);
    if (lambda_t > 0.0) model.backward(uns.dprobs);
    metrics.unsup_loss = uns.mean;
    metrics.ood_kept_fraction = uns.kept_fraction;
  }
  metrics.total_loss = total_loss(metrics.sup_loss, metrics.unsup_loss, lambda_t);

  state.opt.step(model.params());
  ema_update(model.params(), state.ema, cfg.ema_decay);
  ++state.step;
  return metrics;
}

// Argmax error rate in eval mode with no augmentation.
inline double evaluate(Classifier& model, const Dataset& test, int eval_batch = 256) {
  if (test.size() == 0) throw ValidationError("evaluate: empty test set");
  int wrong = 0;
  for (int start = 0; start < test.size(); start += eval_batch) {
    const int n = std::min(eval_batch, test.size() - start);
    ImageBatch b(n, test.images.c, test.images.h, test.images.w);
    for (int i = 0; i < n; ++i) {
      auto src = test.images.image(start + i);
      std::copy(src.begin(), src.end(), b.image(i).begin());
    }
    Matrix probs = model.forward(b, /*train_mode=*/false);
    for (int i = 0; i < n; ++i)
      if (argmax(probs.row(i)) != test.labels[static_cast<size_t>(start + i)]) ++wrong;
  }
  return static_cast<double>(wrong) / test.size();
}

// Evaluation with the EMA shadow swapped in (the default reporting mode).
inline double evaluate_ema(const SmallConvNet& model, const ParamSet& ema, const Dataset& test,
                           int eval_batch = 256) {
  auto clone = model.clone();
  copy_values(ema, clone->params());
  return evaluate(*clone, test, eval_batch);
}

// ---------------------------------------------------------------------------
// Metrics log: one row per evaluation interval. sup/unsup/kept columns are
// means over the interval; tsa_threshold and lambda_t are the schedule values
// of the last executed step. No timestamps here: reruns must be byte-identical.
struct MetricsRow {
  int64_t step = 0;
  double sup_loss = 0.0, unsup_loss = 0.0, tsa_threshold = 1.0, ood_kept_fraction = 1.0;
  double lambda_t = 0.0, train_error = 0.0, test_error_ema = 0.0;
};

inline const char* metrics_csv_header() {
  return "step,sup_loss,unsup_loss,tsa_threshold,ood_kept_fraction,lambda_t,train_error,test_error_ema";
}

inline std::string metrics_csv_row(const MetricsRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%lld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g",
                static_cast<long long>(r.step), r.sup_loss, r.unsup_loss, r.tsa_threshold,
                r.ood_kept_fraction, r.lambda_t, r.train_error, r.test_error_ema);
  return buf;
}

// ---------------------------------------------------------------------------
// Checkpoints: float64 tensor containers for parameters, EMA shadow, and
// optimizer moments, plus a JSON meta file. RNG needs no cursors (all streams
// are keyed by step), so a checkpoint fully determines the continuation.
namespace detail {

inline std::vector<double> flatten_params(const ParamSet& p) {
  std::vector<double> out;
  out.reserve(p.total_count());
  for (const auto& t : p.tensors) out.insert(out.end(), t.v.begin(), t.v.end());
  return out;
}

inline void unflatten_params(const std::vector<double>& flat, ParamSet& p) {
  if (flat.size() != p.total_count())
    throw IoError("checkpoint: parameter count mismatch");
  size_t off = 0;
  for (auto& t : p.tensors) {
    std::copy(flat.begin() + static_cast<long>(off), flat.begin() + static_cast<long>(off + t.count()),
              t.v.begin());
    off += t.count();
  }
}

}  // namespace detail

inline void save_checkpoint(const TrainState& state, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const ParamSet& params = state.model->params();

  auto flat = detail::flatten_params(params);
  save_tensor_f64({static_cast<int64_t>(flat.size())}, flat, (fs::path(dir) / "params.bin").string());
  auto ema_flat = detail::flatten_params(state.ema);
  save_tensor_f64({static_cast<int64_t>(ema_flat.size())}, ema_flat,
                  (fs::path(dir) / "ema.bin").string());

  auto concat = [](const std::vector<std::vector<double>>& vv) {
    std::vector<double> out;
    for (const auto& v : vv) out.insert(out.end(), v.begin(), v.end());
    return out;
  };
  auto m = concat(state.opt.first_moments());
  auto v = concat(state.opt.second_moments());
  if (m.empty()) m.assign(flat.size(), 0.0);
  if (v.empty()) v.assign(flat.size(), 0.0);
  save_tensor_f64({static_cast<int64_t>(m.size())}, m, (fs::path(dir) / "adam_m.bin").string());
  save_tensor_f64({static_cast<int64_t>(v.size())}, v, (fs::path(dir) / "adam_v.bin").string());

  nlohmann::json meta;
  meta["format"] = "realmix-checkpoint/v1";
  meta["step"] = state.step;
  meta["adam_t"] = state.opt.steps_taken();
  meta["config_hash"] = state.config_hash;
  meta["unlabeled_batches_seen"] = state.unlabeled_batches_seen;
  meta["rng"] = "keyed-stateless";
  std::ofstream f(fs::path(dir) / "meta.json", std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint meta in " + dir);
  f << meta.dump(2) << "\n";
}

// state.model must already be built with the right architecture.
inline void load_checkpoint(TrainState& state, const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream f(fs::path(dir) / "meta.json");
  if (!f) throw IoError("missing checkpoint meta: " + dir);
  nlohmann::json meta;
  try {
    f >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("unparsable checkpoint meta: " + std::string(e.what()));
  }
  const std::string hash = meta.value("config_hash", "");
  if (!state.config_hash.empty() && !hash.empty() && hash != state.config_hash)
    throw ValidationError("checkpoint was produced by a different config (hash mismatch)");

  auto flat = load_tensor_f64((fs::path(dir) / "params.bin").string());
  detail::unflatten_params(flat, state.model->params());
  auto ema_flat = load_tensor_f64((fs::path(dir) / "ema.bin").string());
  detail::unflatten_params(ema_flat, state.ema);

  auto m_flat = load_tensor_f64((fs::path(dir) / "adam_m.bin").string());
  auto v_flat = load_tensor_f64((fs::path(dir) / "adam_v.bin").string());
  std::vector<std::vector<double>> m, v;
  size_t off = 0;
  for (const auto& t : state.model->params().tensors) {
    if (off + t.count() > m_flat.size()) throw IoError("checkpoint: moment size mismatch");
    m.emplace_back(m_flat.begin() + static_cast<long>(off),
                   m_flat.begin() + static_cast<long>(off + t.count()));
    v.emplace_back(v_flat.begin() + static_cast<long>(off),
                   v_flat.begin() + static_cast<long>(off + t.count()));
    off += t.count();
  }
  state.opt.restore(std::move(m), std::move(v), meta.at("adam_t").get<int64_t>());
  state.step = meta.at("step").get<int64_t>();
  state.unlabeled_batches_seen = meta.value("unlabeled_batches_seen", int64_t{0});
}

// ---------------------------------------------------------------------------
struct TrainOptions {
  std::string out_dir;           // empty: keep everything in memory
  std::string extend_cache_dir;  // empty: compute the extended pool in memory
  std::string resume_from;       // checkpoint directory
};

struct TrainResult {
  double final_test_error_ema = 1.0;
  double final_train_error = 1.0;
  std::vector<MetricsRow> history;
  int64_t unlabeled_batches_seen = 0;
  std::string final_checkpoint;  // empty when out_dir unset
};

// Full Algorithm-1 training run over a prepared split. Deterministic for a
// fixed (config, split, dataset, seed) on one device; single-threaded.
class Trainer {
public:
  Trainer(Config cfg, const Dataset& train_data, const SplitSpec& split, const Dataset& test,
          TrainOptions opts = {})
      : cfg_(std::move(cfg)), opts_(std::move(opts)) {
    validate_config(cfg_);
    validate_split_against(split, train_data);
    if (train_data.images.h != train_data.images.w)
      throw ValidationError("train: images must be square");

    // Label space: either the dataset's classes or a remapped subset.
    std::map<int, int> remap;
    if (!cfg_.class_subset.empty()) {
      for (size_t i = 0; i < cfg_.class_subset.size(); ++i)
        remap[cfg_.class_subset[i]] = static_cast<int>(i);
      test_view_ = subset_classes(test, cfg_.class_subset);
    } else {
      if (train_data.num_classes() != cfg_.num_classes)
        throw ValidationError("train: config num_classes does not match dataset");
      test_view_ = test;
    }

    labeled_.images = ImageBatch(0, train_data.images.c, train_data.images.h, train_data.images.w);
    labeled_.images.data.clear();
    for (int idx : split.labeled_indices) {
      int y = train_data.labels[static_cast<size_t>(idx)];
      if (!remap.empty()) {
        auto it = remap.find(y);
        if (it == remap.end())
          throw ValidationError("train: labeled sample outside class_subset");
        y = it->second;
      }
      labeled_.images.push_image(train_data.images.image(idx));
      labeled_.labels.push_back(y);
    }
    if (labeled_.labels.empty()) throw ValidationError("train: empty labeled set");

    state_.model = std::make_unique<SmallConvNet>(train_data.images.c, train_data.images.h,
                                                  cfg_.num_classes, cfg_.model_width,
                                                  static_cast<uint64_t>(cfg_.seed));
    state_.ema = state_.model->params();
    state_.ema.zero_grad();
    state_.opt = AdamW(cfg_.learning_rate, cfg_.weight_decay);
    state_.config_hash = config_hash(cfg_);

    if (!cfg_.supervised_only)
      pool_ = build_extended_pool(train_data, split, cfg_, opts_.extend_cache_dir);

    if (!opts_.resume_from.empty()) load_checkpoint(state_, opts_.resume_from);
  }

  // Swap in pretrained conv weights (transfer learning). Resets the EMA
  // shadow to the new parameters; call before run().
  void init_trunk_from(const ParamSet& donor) {
    state_.model->load_trunk(donor);
    copy_values(state_.model->params(), state_.ema);
  }

  TrainResult run() {
    namespace fs = std::filesystem;
    std::ofstream csv;
    if (!opts_.out_dir.empty()) {
      fs::create_directories(opts_.out_dir);
      csv.open(fs::path(opts_.out_dir) / "metrics.csv", std::ios::trunc);
      if (!csv) throw IoError("cannot write metrics.csv in " + opts_.out_dir);
      csv << metrics_csv_header() << "\n";
      csv.flush();
    }

    EpochSampler lab_sampler(labeled_.images.n, cfg_.batch_size,
                             RngStream(static_cast<uint64_t>(cfg_.seed), streams::kLabeledSampler));
    std::optional<EpochSampler> unl_sampler;
    if (!cfg_.supervised_only)
      unl_sampler.emplace(pool_.n, cfg_.effective_unlabeled_batch(),
                          RngStream(static_cast<uint64_t>(cfg_.seed), streams::kUnlabeledSampler));

    TrainResult result;
    double sup_sum = 0.0, unsup_sum = 0.0, kept_sum = 0.0;
    int64_t interval_n = 0;
    std::string last_checkpoint = opts_.resume_from;

    while (state_.step < cfg_.total_steps) {
      LabeledBatch lb = gather_labeled(lab_sampler.batch_at(state_.step));
      UnlabeledBatch ub;
      if (unl_sampler) ub = gather_unlabeled(unl_sampler->batch_at(state_.step));

      StepMetrics m;
      try {
        m = train_step(state_, lb, ub, cfg_);
      } catch (const RuntimeAbort& e) {
        throw RuntimeAbort(std::string(e.what()) +
                           (last_checkpoint.empty() ? "" : "; last checkpoint: " + last_checkpoint));
      }
      sup_sum += m.sup_loss;
      unsup_sum += m.unsup_loss;
      kept_sum += m.ood_kept_fraction;
      ++interval_n;

      const bool at_eval = state_.step % cfg_.eval_every == 0 || state_.step == cfg_.total_steps;
      if (at_eval) {
        MetricsRow row;
        row.step = state_.step;
        row.sup_loss = sup_sum / static_cast<double>(interval_n);
        row.unsup_loss = unsup_sum / static_cast<double>(interval_n);
        row.ood_kept_fraction = kept_sum / static_cast<double>(interval_n);
        row.tsa_threshold = m.tsa_threshold;
        row.lambda_t = m.lambda_t;
        Dataset train_eval;
        train_eval.images = labeled_.images;
        train_eval.labels = labeled_.labels;
        train_eval.class_names = test_view_.class_names;
        row.train_error = evaluate(*state_.model, train_eval);
        row.test_error_ema = evaluate_ema(*state_.model, state_.ema, test_view_);
        result.history.push_back(row);
        if (csv.is_open()) {
          csv << metrics_csv_row(row) << "\n";
          csv.flush();
        }
        sup_sum = unsup_sum = kept_sum = 0.0;
        interval_n = 0;
      }

      if (!opts_.out_dir.empty() && cfg_.checkpoint_every > 0 &&
          state_.step % cfg_.checkpoint_every == 0 && state_.step < cfg_.total_steps) {
        char name[32];
        std::snprintf(name, sizeof(name), "step_%08lld", static_cast<long long>(state_.step));
        std::string dir = (fs::path(opts_.out_dir) / "checkpoints" / name).string();
        save_checkpoint(state_, dir);
        last_checkpoint = dir;
      }
    }

    if (result.history.empty() || result.history.back().step != state_.step) {
      // total_steps == 0 or resume landed past the last eval point
      MetricsRow row;
      row.step = state_.step;
      Dataset train_eval;
      train_eval.images = labeled_.images;
      train_eval.labels = labeled_.labels;
      train_eval.class_names = test_view_.class_names;
      row.train_error = evaluate(*state_.model, train_eval);
      row.test_error_ema = evaluate_ema(*state_.model, state_.ema, test_view_);
      result.history.push_back(row);
      if (csv.is_open()) {
        csv << metrics_csv_row(row) << "\n";
        csv.flush();
      }
    }

    if (!opts_.out_dir.empty()) {
      std::string dir = (fs::path(opts_.out_dir) / "checkpoints" / "final").string();
      save_checkpoint(state_, dir);
      result.final_checkpoint = dir;
    }
    result.final_train_error = result.history.back().train_error;
    result.final_test_error_ema = result.history.back().test_error_ema;
    result.unlabeled_batches_seen = state_.unlabeled_batches_seen;
    return result;
  }

  TrainState& state() { return state_; }
  const Config& config() const { return cfg_; }
  const Dataset& test_view() const { return test_view_; }

private:
  LabeledBatch gather_labeled(const std::vector<int>& idx) const {
    LabeledBatch b;
    b.images = ImageBatch(0, labeled_.images.c, labeled_.images.h, labeled_.images.w);
    b.images.data.clear();
    for (int i : idx) {
      b.images.push_image(labeled_.images.image(i));
      b.labels.push_back(labeled_.labels[static_cast<size_t>(i)]);
    }
    return b;
  }

  UnlabeledBatch gather_unlabeled(const std::vector<int>& idx) const {
    UnlabeledBatch b(0, pool_.c, pool_.h, pool_.w);
    b.data.clear();
    for (int i : idx) b.push_image(pool_.image(i));
    return b;
  }

  Config cfg_;
  TrainOptions opts_;
  LabeledBatch labeled_;
  UnlabeledBatch pool_;
  Dataset test_view_;
  TrainState state_;
};

// Free-function veneer matching the library surface.
inline TrainResult train(const Config& cfg, const Dataset& train_data, const SplitSpec& split,
                         const Dataset& test, TrainOptions opts = {}) {
  Trainer t(cfg, train_data, split, test, std::move(opts));
  return t.run();
}

}  // namespace realmix
