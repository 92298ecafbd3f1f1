#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "realmix/dataset.hpp"
#include "realmix/rng.hpp"

namespace realmix {

// Procedural 10-class grayscale benchmark used for desk-scale experiments.
// Two semantic groups mirror an animals/transportation style partition:
//   shapes   (6): disk, square, ring, frame, plus, triangle
//   textures (4): hstripes, vstripes, diagstripes, checker
// Every sample jitters position, scale, contrast, and stripe geometry, and
// carries per-pixel Gaussian noise, so tiny labeled sets underdetermine the
// classes. Horizontal flips and small translations are label-preserving by
// construction (diagonal stripes sample both orientations).
struct SynthParams {
  int side = 12;
  double noise_min = 0.35, noise_max = 0.75;
  double jitter_frac = 0.18;          // center jitter as a fraction of side
  double radius_min = 0.21, radius_max = 0.40;  // shape radius, fraction of side
  double fg_min = 0.15, fg_max = 0.85;           // foreground intensity
  double bg_min = -0.85, bg_max = -0.25;         // background intensity
  double bg_gradient = 0.35;          // random linear shading across the image
  int blotch_max_count = 3;           // occluding rectangles per sample (0..max)
  int blotch_min_size = 2, blotch_max_size = 5;
  double invert_prob = 0.35;          // shape polarity flip (dark-on-light mode)
};

namespace detail {

inline double coverage(double signed_dist, double edge = 0.8) {
  // 1 inside (negative distance), 0 outside, soft over ~edge pixels
  double v = 0.5 - signed_dist / edge;
  return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
}

struct SynthLatents {
  double bg, fg, cx, cy, r, sigma, period, phase, orient, cell_ox, cell_oy;
  double grad_gx, grad_gy;
  double hole_ratio, bar_ratio;  // ring/frame hole and plus bar width, as ratios of r
  int cell;
  int bg_mode;                   // 0 flat, 1 linear, 2 corner radial, 3 half split
  double bg_amp, bg_aux0, bg_aux1;
  struct Blotch {
    int x0, y0, x1, y1;
    double value;
  };
  std::vector<Blotch> blotches;
};

inline SynthLatents draw_latents(Rng& rng, const SynthParams& p) {
  SynthLatents l;
  const double s = p.side;
  l.bg = rng.uniform(p.bg_min, p.bg_max);
  l.fg = rng.uniform(p.fg_min, p.fg_max);
  l.cx = 0.5 * s + rng.uniform(-p.jitter_frac, p.jitter_frac) * s;
  l.cy = 0.5 * s + rng.uniform(-p.jitter_frac, p.jitter_frac) * s;
  l.r = rng.uniform(p.radius_min, p.radius_max) * s;
  l.sigma = rng.uniform(p.noise_min, p.noise_max);
  l.period = rng.uniform(2.8, 6.0);
  l.phase = rng.uniform(0.0, l.period);
  l.orient = rng.uniform() < 0.5 ? 1.0 : -1.0;
  l.cell = rng.uniform_int(2, 4);
  l.cell_ox = rng.uniform_index(static_cast<uint64_t>(l.cell));
  l.cell_oy = rng.uniform_index(static_cast<uint64_t>(l.cell));
  // background shading: one of four discrete modes, amplitude up to bg_gradient.
  // Few strong nuisance modes make tiny labeled sets prone to shortcut
  // correlations that the unlabeled pool disambiguates.
  l.bg_mode = rng.uniform_int(0, 3);
  l.bg_amp = rng.uniform(0.45, 1.0) * p.bg_gradient;
  const double angle = rng.uniform(0.0, 6.283185307179586477);
  l.grad_gx = l.bg_amp * std::cos(angle) / s;
  l.grad_gy = l.bg_amp * std::sin(angle) / s;
  l.bg_aux0 = rng.uniform();  // corner pick / split coordinate
  l.bg_aux1 = rng.uniform();  // split orientation
  if (rng.uniform() < p.invert_prob) std::swap(l.fg, l.bg);  // polarity mode
  l.hole_ratio = rng.uniform(0.45, 0.70);  // floor keeps ring/disk separable at small radii
  l.bar_ratio = rng.uniform(0.24, 0.45);
  if (p.blotch_max_count > 0) {
    // fixed draw schedule regardless of count, for reproducibility
    const int count = rng.uniform_int(0, p.blotch_max_count);
    for (int b = 0; b < p.blotch_max_count; ++b) {
      SynthLatents::Blotch bl;
      const int bw = rng.uniform_int(p.blotch_min_size, p.blotch_max_size);
      const int bh = rng.uniform_int(p.blotch_min_size, p.blotch_max_size);
      bl.x0 = rng.uniform_int(0, p.side - 1);
      bl.y0 = rng.uniform_int(0, p.side - 1);
      bl.x1 = std::min(p.side, bl.x0 + bw);
      bl.y1 = std::min(p.side, bl.y0 + bh);
      bl.value = rng.uniform(-1.0, 1.0);
      if (b < count) l.blotches.push_back(bl);
    }
  }
  return l;
}

inline double shape_coverage(int cls, double px, double py, const SynthLatents& l) {
  const double dx = px - l.cx, dy = py - l.cy;
  switch (cls) {
    case 0: {  // disk
      return coverage(std::hypot(dx, dy) - l.r);
    }
    case 1: {  // filled square
      return coverage(std::max(std::fabs(dx), std::fabs(dy)) - 0.85 * l.r);
    }
    case 2: {  // ring
      const double d = std::hypot(dx, dy);
      return coverage(d - l.r) * coverage(l.hole_ratio * l.r - d);
    }
    case 3: {  // hollow square frame
      const double d = std::max(std::fabs(dx), std::fabs(dy));
      return coverage(d - 0.9 * l.r) * coverage(l.hole_ratio * 0.9 * l.r - d);
    }
    case 4: {  // plus
      const double bar1 = std::max(std::fabs(dx) - l.bar_ratio * l.r, std::fabs(dy) - l.r);
      const double bar2 = std::max(std::fabs(dy) - l.bar_ratio * l.r, std::fabs(dx) - l.r);
      return coverage(std::min(bar1, bar2));
    }
    case 5: {  // triangle, apex up
      const double half_h = l.r;
      const double top = dy + half_h;                       // >= 0 below apex
      const double bottom = 0.75 * half_h - dy;             // >= 0 above base
      const double width_at = 0.95 * l.r * (dy + half_h) / (1.75 * half_h);
      const double slant = width_at - std::fabs(dx);
      return coverage(-std::min({top, bottom, slant}));
    }
    default:
      return 0.0;
  }
}

inline double texture_coverage(int cls, double px, double py, const SynthLatents& l) {
  auto square_wave = [](double u) {
    double v = 2.2 * std::sin(u);
    return 0.5 + 0.5 * (v < -1.0 ? -1.0 : (v > 1.0 ? 1.0 : v));
  };
  const double two_pi = 6.283185307179586477;
  switch (cls) {
    case 6:  // horizontal stripes
      return square_wave(two_pi * (py + l.phase) / l.period);
    case 7:  // vertical stripes
      return square_wave(two_pi * (px + l.phase) / l.period);
    case 8:  // diagonal stripes, either orientation
      return square_wave(two_pi * ((px * l.orient + py) * 0.7071067811865476 + l.phase) / l.period);
    case 9: {  // checkerboard
      const int qx = static_cast<int>(std::floor((px + l.cell_ox) / l.cell));
      const int qy = static_cast<int>(std::floor((py + l.cell_oy) / l.cell));
      return ((qx + qy) & 1) ? 1.0 : 0.0;
    }
    default:
      return 0.0;
  }
}

inline double background_shade(double px, double py, const SynthLatents& l, int side) {
  switch (l.bg_mode) {
    case 1:  // linear gradient
      return l.grad_gx * (px - 0.5 * side) + l.grad_gy * (py - 0.5 * side);
    case 2: {  // radial shading from one corner
      const double cx = l.bg_aux0 < 0.5 ? 0.0 : side;
      const double cy = l.bg_aux1 < 0.5 ? 0.0 : side;
      const double diag = 1.4142135623730951 * side;
      return l.bg_amp * (std::hypot(px - cx, py - cy) / diag - 0.5);
    }
    case 3: {  // half-plane step
      const double split = side * (0.3 + 0.4 * l.bg_aux0);
      const bool horizontal = l.bg_aux1 < 0.5;
      const double coord = horizontal ? py : px;
      return coord < split ? 0.5 * l.bg_amp : -0.5 * l.bg_amp;
    }
    default:
      return 0.0;
  }
}

}  // namespace detail

inline const std::vector<std::string>& synth_class_names() {
  static const std::vector<std::string> names = {"disk",     "square",   "ring",    "frame",
                                                 "plus",     "triangle", "hstripes", "vstripes",
                                                 "diagstripes", "checker"};
  return names;
}

inline std::vector<float> render_synth_image(int cls, uint64_t sample_key, uint64_t seed,
                                             const SynthParams& p) {
  RngStream stream(seed, streams::kSynth);
  Rng rng = stream.at(static_cast<uint64_t>(cls), sample_key);
  detail::SynthLatents l = detail::draw_latents(rng, p);

  std::vector<float> img(static_cast<size_t>(p.side) * p.side);
  for (int y = 0; y < p.side; ++y)
    for (int x = 0; x < p.side; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double cov = cls < 6 ? detail::shape_coverage(cls, px, py, l)
                                 : detail::texture_coverage(cls, px, py, l);
      const double shade = detail::background_shade(px, py, l, p.side);
      double base = l.bg + (l.fg - l.bg) * cov + shade;
      for (const auto& bl : l.blotches)
        if (x >= bl.x0 && x < bl.x1 && y >= bl.y0 && y < bl.y1) base = bl.value;
      double v = base + l.sigma * rng.normal();
      if (v < -1.0) v = -1.0;
      if (v > 1.0) v = 1.0;
      img[static_cast<size_t>(y) * p.side + x] = static_cast<float>(v);
    }
  return img;
}

// Class-major generation; train sample i of class c uses key i, test samples
// continue at per_class_train + j so train and test never share latents.
inline DatasetBundle make_synthetic_dataset(int per_class_train, int per_class_test, uint64_t seed,
                                            const SynthParams& p = {}) {
  if (per_class_train < 1 || per_class_test < 1)
    throw ValidationError("make_synthetic_dataset: per-class counts must be >= 1");
  DatasetBundle b;
  const int k = static_cast<int>(synth_class_names().size());
  auto fill = [&](Dataset& d, int per_class, int key_offset) {
    d.class_names = synth_class_names();
    d.images = ImageBatch(0, 1, p.side, p.side);
    d.images.data.reserve(static_cast<size_t>(per_class) * k * p.side * p.side);
    for (int c = 0; c < k; ++c)
      for (int i = 0; i < per_class; ++i) {
        auto img = render_synth_image(c, static_cast<uint64_t>(key_offset + i), seed, p);
        d.images.push_image(img);
        d.labels.push_back(c);
      }
  };
  fill(b.train, per_class_train, 0);
  fill(b.test, per_class_test, per_class_train);
  b.groups["shapes"] = {0, 1, 2, 3, 4, 5};
  b.groups["textures"] = {6, 7, 8, 9};
  return b;
}

}  // namespace realmix
