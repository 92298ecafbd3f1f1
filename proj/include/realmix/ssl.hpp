#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "realmix/augment.hpp"
#include "realmix/config.hpp"
#include "realmix/error.hpp"
#include "realmix/image.hpp"
#include "realmix/matrix.hpp"
#include "realmix/rng.hpp"

namespace realmix {

// ---------------------------------------------------------------------------
// Sharpening (entropy minimization): out_i = p_i^(1/T) / sum_k p_k^(1/T).
// Normalizing by the max entry first keeps the powers in range for small T,
// and preserves the argmax exactly. T = 1 returns the input unchanged.
inline std::vector<double> sharpen(std::span<const double> p, double temperature) {
  if (!(temperature > 0.0)) throw ValidationError("sharpen: temperature must be > 0");
  double pmax = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw ValidationError("sharpen: probabilities must be nonnegative");
    pmax = std::max(pmax, v);
  }
  if (pmax <= 0.0) throw ValidationError("sharpen: all-zero distribution");
  std::vector<double> out(p.begin(), p.end());
  if (temperature == 1.0) return out;

  const double inv_t = 1.0 / temperature;
  double sum = 0.0;
  for (double& v : out) {
    v = std::pow(v / pmax, inv_t);
    sum += v;
  }
  for (double& v : out) v /= sum;
  return out;
}

// ---------------------------------------------------------------------------
// MixUp with the dominance bias: phi' = max(phi, 1 - phi) >= 0.5, so the
// mix always resembles its first argument.
inline double mixup_weight(double phi) { return std::max(phi, 1.0 - phi); }

inline double draw_mixup_weight(double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw ValidationError("mixup: alpha must be > 0");
  return mixup_weight(rng.beta(alpha, alpha));
}

// x3 = w*x_a + (1-w)*x_b, elementwise, into out.
inline void mix_images(std::span<const float> a, std::span<const float> b, double w,
                       std::span<float> out) {
  if (a.size() != b.size() || a.size() != out.size())
    throw ValidationError("mixup: input shape mismatch");
  for (size_t i = 0; i < a.size(); ++i)
    out[i] = static_cast<float>(w * a[i] + (1.0 - w) * b[i]);
}

inline void mix_probs(std::span<const double> a, std::span<const double> b, double w,
                      std::span<double> out) {
  if (a.size() != b.size() || a.size() != out.size())
    throw ValidationError("mixup: target shape mismatch");
  for (size_t i = 0; i < a.size(); ++i) out[i] = w * a[i] + (1.0 - w) * b[i];
}

struct MixedSample {
  std::vector<float> x;
  std::vector<double> y;
};

inline MixedSample mixup(std::span<const float> xa, std::span<const double> ya,
                         std::span<const float> xb, std::span<const double> yb, double alpha,
                         Rng& rng) {
  const double w = draw_mixup_weight(alpha, rng);
  MixedSample m;
  m.x.resize(xa.size());
  m.y.resize(ya.size());
  mix_images(xa, xb, w, m.x);
  mix_probs(ya, yb, w, m.y);
  return m;
}

// ---------------------------------------------------------------------------
// Target generation (consistency targets for unlabeled samples): two
// independent augmentations per sample, classifier outputs averaged, then
// sharpened. Both augmented copies go downstream carrying the shared target.
// The classifier is only evaluated, never differentiated, here.
struct GeneratedTargets {
  ImageBatch inputs;      // 2N images: [aug1 of each sample, aug2 of each sample]
  Matrix targets;         // 2N x K, rows i and N+i identical
  Matrix per_sample;      // N x K, the sharpened target of each source sample
};

template <typename Model>
GeneratedTargets generate_targets(Model& model, const UnlabeledBatch& batch,
                                  const AugmentPolicy& policy, double temperature,
                                  const RngStream& target_aug, uint64_t step) {
  const int n = batch.n;
  GeneratedTargets out;
  out.inputs = ImageBatch(2 * n, batch.c, batch.h, batch.w);
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < 2; ++a) {
      Rng rng = target_aug.at(step, static_cast<uint64_t>(i), static_cast<uint64_t>(a));
      augment_image(batch.image(i), out.inputs.image(a * n + i), batch.c, batch.h, batch.w,
                    policy, rng);
    }
  }

  Matrix probs = model.forward(out.inputs, /*train_mode=*/false);
  const int k = probs.cols;
  out.per_sample = Matrix(n, k);
  out.targets = Matrix(2 * n, k);
  std::vector<double> avg(static_cast<size_t>(k));
  for (int i = 0; i < n; ++i) {
    auto p1 = probs.row(i);
    auto p2 = probs.row(n + i);
    if (!is_prob_vector(p1) || !is_prob_vector(p2))
      throw RuntimeAbort("generate_targets: model output is not a distribution");
    for (int c = 0; c < k; ++c) avg[static_cast<size_t>(c)] = 0.5 * (p1[static_cast<size_t>(c)] + p2[static_cast<size_t>(c)]);
    auto sharp = sharpen(avg, temperature);
    for (int c = 0; c < k; ++c) {
      out.per_sample.at(i, c) = sharp[static_cast<size_t>(c)];
      out.targets.at(i, c) = sharp[static_cast<size_t>(c)];
      out.targets.at(n + i, c) = sharp[static_cast<size_t>(c)];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Out-of-distribution masking: zero the losses of the floor(gamma*N) samples
// with the lowest confidence. The threshold is the per-batch gamma-quantile,
// recomputed every call; ties mask the lower index first.
struct OodMaskResult {
  std::vector<double> masked_losses;
  std::vector<char> kept;
  int num_masked = 0;
};

inline OodMaskResult ood_mask(std::span<const double> per_sample_losses,
                              std::span<const double> confidences, double gamma) {
  if (per_sample_losses.size() != confidences.size())
    throw ValidationError("ood_mask: losses/confidences length mismatch");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ValidationError("ood_mask: gamma must be in [0, 1)");

  const size_t n = per_sample_losses.size();
  OodMaskResult r;
  r.masked_losses.assign(per_sample_losses.begin(), per_sample_losses.end());
  r.kept.assign(n, 1);
  r.num_masked = static_cast<int>(std::floor(gamma * static_cast<double>(n)));
  if (r.num_masked == 0) return r;

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return confidences[a] < confidences[b]; });
  for (int i = 0; i < r.num_masked; ++i) {
    r.masked_losses[order[static_cast<size_t>(i)]] = 0.0;
    r.kept[order[static_cast<size_t>(i)]] = 0;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Training signal annealing.
struct TsaState {
  int64_t step = 0;
  int64_t total_steps = 1;
  TsaSchedule schedule = TsaSchedule::kLinear;
  int num_classes = 2;
};

// Threshold eta(t) in [1/K, 1]; monotone nondecreasing in step. The "none"
// schedule pins it at 1 (no sample can exceed it).
inline double tsa_threshold(const TsaState& s) {
  if (s.step < 0 || s.step > s.total_steps)
    throw ValidationError("tsa_threshold: step out of [0, total_steps]");
  if (s.num_classes < 2) throw ValidationError("tsa_threshold: num_classes must be >= 2");
  if (s.schedule == TsaSchedule::kNone) return 1.0;
  const double inv_k = 1.0 / static_cast<double>(s.num_classes);
  const double t = static_cast<double>(s.step) / static_cast<double>(s.total_steps);
  double frac = t;
  if (s.schedule == TsaSchedule::kLog) frac = 1.0 - std::exp(-5.0 * t);
  else if (s.schedule == TsaSchedule::kExp) frac = std::exp(5.0 * (t - 1.0));
  return inv_k + frac * (1.0 - inv_k);
}

struct TsaMaskResult {
  std::vector<double> masked_losses;
  std::vector<char> kept;
  double mean = 0.0;  // over kept samples only; 0 if none kept
  int num_kept = 0;
};

// Masks the supervised loss of samples whose predicted probability on their
// own class already exceeds the threshold.
inline TsaMaskResult tsa_mask(std::span<const double> sup_losses, const Matrix& predicted_probs,
                              std::span<const int> labels, double threshold) {
  if (sup_losses.size() != labels.size() ||
      static_cast<int>(sup_losses.size()) != predicted_probs.rows)
    throw ValidationError("tsa_mask: input length mismatch");
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw ValidationError("tsa_mask: threshold must be in [0, 1]");

  TsaMaskResult r;
  const size_t n = sup_losses.size();
  r.masked_losses.assign(sup_losses.begin(), sup_losses.end());
  r.kept.assign(n, 1);
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= predicted_probs.cols) throw ValidationError("tsa_mask: label out of range");
    if (predicted_probs.at(static_cast<int>(i), y) > threshold) {
      r.masked_losses[i] = 0.0;
      r.kept[i] = 0;
    } else {
      sum += r.masked_losses[i];
      ++r.num_kept;
    }
  }
  r.mean = r.num_kept > 0 ? sum / static_cast<double>(r.num_kept) : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Losses. Cross-entropy takes soft targets (MixUp produces them); predictions
// are clamped away from zero before the log.
inline constexpr double kLogEps = 1e-12;

struct PerSampleLoss {
  std::vector<double> per_sample;
  double mean = 0.0;
};

inline PerSampleLoss supervised_loss(const Matrix& predicted, const Matrix& targets) {
  if (predicted.rows != targets.rows || predicted.cols != targets.cols)
    throw ValidationError("supervised_loss: shape mismatch");
  PerSampleLoss out;
  out.per_sample.resize(static_cast<size_t>(predicted.rows));
  for (int i = 0; i < predicted.rows; ++i) {
    double l = 0.0;
    for (int c = 0; c < predicted.cols; ++c)
      l -= targets.at(i, c) * std::log(std::max(predicted.at(i, c), kLogEps));
    out.per_sample[static_cast<size_t>(i)] = l;
    out.mean += l;
  }
  if (predicted.rows > 0) out.mean /= predicted.rows;
  return out;
}

// Consistency loss: per-sample mean squared error over classes.
inline std::vector<double> unsupervised_loss(const Matrix& predicted, const Matrix& targets) {
  if (predicted.rows != targets.rows || predicted.cols != targets.cols)
    throw ValidationError("unsupervised_loss: shape mismatch");
  std::vector<double> out(static_cast<size_t>(predicted.rows), 0.0);
  for (int i = 0; i < predicted.rows; ++i) {
    double l = 0.0;
    for (int c = 0; c < predicted.cols; ++c) {
      const double diff = predicted.at(i, c) - targets.at(i, c);
      l += diff * diff;
    }
    out[static_cast<size_t>(i)] = l / predicted.cols;
  }
  return out;
}

inline double lambda_at(int64_t step, double lambda_max, int64_t rampup_steps) {
  if (lambda_max < 0.0) throw ValidationError("lambda_max must be >= 0");
  if (rampup_steps <= 0) return lambda_max;
  const double f = std::min(1.0, static_cast<double>(step) / static_cast<double>(rampup_steps));
  return lambda_max * f;
}

inline double total_loss(double sup_mean, double unsup_mean, double lambda_t) {
  const double total = sup_mean + lambda_t * unsup_mean;
  if (!std::isfinite(total))
    throw RuntimeAbort("total_loss: non-finite loss (sup=" + std::to_string(sup_mean) +
                       ", unsup=" + std::to_string(unsup_mean) + ")");
  return total;
}

}  // namespace realmix
