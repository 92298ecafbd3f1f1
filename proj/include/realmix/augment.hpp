#pragma once

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "realmix/config.hpp"
#include "realmix/error.hpp"
#include "realmix/image.hpp"
#include "realmix/rng.hpp"
#include "realmix/tensor_io.hpp"

namespace realmix {

// Stochastic per-image augmentation, applied in order:
//   horizontal flip -> translate (zero-pad, crop back) -> cutout.
// Draw order is fixed per enabled stage: 1 uniform for flip, 2 ints for
// translate, 2 ints for the cutout center. The cutout square is clipped at
// image borders; its center is uniform over the full image.
inline void augment_image(std::span<const float> in, std::span<float> out, int c, int h, int w,
                          const AugmentPolicy& policy, Rng& rng) {
  const size_t plane = static_cast<size_t>(h) * w;
  if (in.size() != plane * c || out.size() != in.size())
    throw ValidationError("augment: image size does not match shape");
  if (policy.cutout_size > std::min(h, w))
    throw ValidationError("augment: cutout_size exceeds image side");

  std::vector<float> tmp(in.begin(), in.end());

  if (policy.horizontal_flip && policy.flip_prob > 0.0) {
    if (rng.uniform() < policy.flip_prob) {
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y) {
          float* row = tmp.data() + static_cast<size_t>(ch) * plane + static_cast<size_t>(y) * w;
          std::reverse(row, row + w);
        }
    }
  }

  int dx = 0, dy = 0;
  if (policy.translate_max > 0) {
    dx = rng.uniform_int(-policy.translate_max, policy.translate_max);
    dy = rng.uniform_int(-policy.translate_max, policy.translate_max);
  }
  if (dx != 0 || dy != 0) {
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          int sy = y - dy, sx = x - dx;
          float v = 0.0f;  // zero padding, mid-gray on the [-1,1] scale
          if (sy >= 0 && sy < h && sx >= 0 && sx < w)
            v = tmp[static_cast<size_t>(ch) * plane + static_cast<size_t>(sy) * w + sx];
          out[static_cast<size_t>(ch) * plane + static_cast<size_t>(y) * w + x] = v;
        }
  } else {
    std::copy(tmp.begin(), tmp.end(), out.begin());
  }

  if (policy.cutout_size > 0) {
    const int s = policy.cutout_size;
    const int cx = rng.uniform_int(0, w - 1);
    const int cy = rng.uniform_int(0, h - 1);
    const int x0 = std::max(0, cx - s / 2), x1 = std::min(w, cx - s / 2 + s);
    const int y0 = std::max(0, cy - s / 2), y1 = std::min(h, cy - s / 2 + s);
    for (int ch = 0; ch < c; ++ch)
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
          out[static_cast<size_t>(ch) * plane + static_cast<size_t>(y) * w + x] =
              static_cast<float>(policy.fill_value);
  }
}

inline ImageBatch augment(const ImageBatch& batch, int index, const AugmentPolicy& policy, Rng rng) {
  ImageBatch out(1, batch.c, batch.h, batch.w);
  augment_image(batch.image(index), out.image(0), batch.c, batch.h, batch.w, policy, rng);
  return out;
}

// Offline pool expansion: `copies` independently-augmented passes over the
// input, ordered copy-major (all of copy 0, then copy 1, ...). Each output
// image is keyed by (copy, sample) on the extend stream, so the pool is a
// pure function of (input, policy, seed) regardless of evaluation order.
inline UnlabeledBatch extend(const UnlabeledBatch& unlabeled, int copies,
                             const AugmentPolicy& policy, const RngStream& stream) {
  if (copies < 1) throw ValidationError("extend: copies must be >= 1");
  UnlabeledBatch out(copies * unlabeled.n, unlabeled.c, unlabeled.h, unlabeled.w);
  for (int copy = 0; copy < copies; ++copy)
    for (int i = 0; i < unlabeled.n; ++i) {
      Rng rng = stream.at(static_cast<uint64_t>(copy), static_cast<uint64_t>(i));
      augment_image(unlabeled.image(i),
                    out.image(copy * unlabeled.n + i),
                    unlabeled.c, unlabeled.h, unlabeled.w, policy, rng);
    }
  return out;
}

// Fixed cache-key format: ext_<fnv1a64 over input checksum, policy, copies, seed>.
inline std::string extend_cache_key(const UnlabeledBatch& unlabeled, int copies,
                                    const AugmentPolicy& policy, int64_t seed) {
  std::string material = checksum_hex(unlabeled.data.data(), unlabeled.data.size() * sizeof(float));
  material += "|" + policy.key_string();
  material += "|c" + std::to_string(copies);
  material += "|s" + std::to_string(seed);
  return "ext_" + checksum_hex(fnv1a64(material));
}

// Disk-backed extend: reuses `<cache_dir>/<key>.bin` when present (contents
// are checksum-verified by the tensor loader), otherwise computes and writes
// it. Returns the pool either way.
inline UnlabeledBatch extend_cached(const UnlabeledBatch& unlabeled, int copies,
                                    const AugmentPolicy& policy, int64_t seed,
                                    const std::string& cache_dir, std::string* key_out = nullptr) {
  namespace fs = std::filesystem;
  const std::string key = extend_cache_key(unlabeled, copies, policy, seed);
  if (key_out) *key_out = key;
  const fs::path bin = fs::path(cache_dir) / (key + ".bin");
  if (fs::exists(bin)) {
    TensorFile t = load_tensor(bin.string());
    if (t.shape.size() != 4) throw IoError("extend cache entry has wrong rank: " + bin.string());
    UnlabeledBatch out(static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]),
                       static_cast<int>(t.shape[2]), static_cast<int>(t.shape[3]));
    out.data = std::move(t.data);
    return out;
  }
  UnlabeledBatch out = extend(unlabeled, copies, policy,
                              RngStream(static_cast<uint64_t>(seed), streams::kExtend));
  fs::create_directories(cache_dir);
  TensorFile t;
  t.shape = {out.n, out.c, out.h, out.w};
  t.data = out.data;
  save_tensor(t, bin.string());
  return out;
}

}  // namespace realmix
