#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "realmix/error.hpp"

namespace realmix {

// NCHW float32 batch, pixel values in [-1, 1]. Images stay float32 end to
// end (matching the disk container); model arithmetic upcasts to double.
struct ImageBatch {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<float> data;

  ImageBatch() = default;
  ImageBatch(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_),
        data(static_cast<size_t>(n_) * c_ * h_ * w_, 0.0f) {}

  int64_t image_size() const { return static_cast<int64_t>(c) * h * w; }

  std::span<float> image(int i) {
    return {data.data() + static_cast<size_t>(i) * image_size(),
            static_cast<size_t>(image_size())};
  }
  std::span<const float> image(int i) const {
    return {data.data() + static_cast<size_t>(i) * image_size(),
            static_cast<size_t>(image_size())};
  }

  void push_image(std::span<const float> img) {
    if (static_cast<int64_t>(img.size()) != image_size())
      throw ValidationError("push_image: size mismatch");
    data.insert(data.end(), img.begin(), img.end());
    ++n;
  }
};

struct LabeledBatch {
  ImageBatch images;
  std::vector<int> labels;
};

using UnlabeledBatch = ImageBatch;

}  // namespace realmix
