#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "realmix/error.hpp"
#include "realmix/image.hpp"
#include "realmix/matrix.hpp"
#include "realmix/rng.hpp"

namespace realmix {

struct ParamTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<double> v;  // values
  std::vector<double> g;  // gradient accumulator, same shape

  size_t count() const { return v.size(); }
};

struct ParamSet {
  std::vector<ParamTensor> tensors;

  size_t total_count() const {
    size_t n = 0;
    for (const auto& t : tensors) n += t.count();
    return n;
  }
  void zero_grad() {
    for (auto& t : tensors) std::fill(t.g.begin(), t.g.end(), 0.0);
  }
  ParamTensor* find(const std::string& name) {
    for (auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

// Shape-congruent value copy (names and shapes must line up).
inline void copy_values(const ParamSet& from, ParamSet& to) {
  if (from.tensors.size() != to.tensors.size())
    throw ValidationError("copy_values: parameter collections differ");
  for (size_t i = 0; i < from.tensors.size(); ++i) {
    if (from.tensors[i].v.size() != to.tensors[i].v.size())
      throw ValidationError("copy_values: shape mismatch at " + from.tensors[i].name);
    to.tensors[i].v = from.tensors[i].v;
  }
}

// Minimal classifier contract used by the training loop: a forward pass that
// yields one probability row per input, and a backward pass that accumulates
// parameter gradients given dLoss/dProbs for the most recent forward.
class Classifier {
public:
  virtual ~Classifier() = default;
  virtual Matrix forward(const ImageBatch& batch, bool train_mode) = 0;
  virtual void backward(const Matrix& dprobs) = 0;
  virtual ParamSet& params() = 0;
  virtual const ParamSet& params() const = 0;
  virtual int num_classes() const = 0;
  virtual std::unique_ptr<Classifier> clone() const = 0;
  void zero_grad() { params().zero_grad(); }
};

namespace kernels {

// 3x3 convolution, stride 1, zero padding 1, NCHW.
inline void conv3x3_forward(const std::vector<double>& in, int n, int ci, int h, int w,
                            const std::vector<double>& weight, const std::vector<double>& bias,
                            int co, std::vector<double>& out) {
  out.assign(static_cast<size_t>(n) * co * h * w, 0.0);
  const size_t in_plane = static_cast<size_t>(h) * w;
  for (int b = 0; b < n; ++b) {
    const double* inb = in.data() + static_cast<size_t>(b) * ci * in_plane;
    double* outb = out.data() + static_cast<size_t>(b) * co * in_plane;
    for (int oc = 0; oc < co; ++oc) {
      double* op = outb + static_cast<size_t>(oc) * in_plane;
      for (size_t i = 0; i < in_plane; ++i) op[i] = bias[static_cast<size_t>(oc)];
      for (int icn = 0; icn < ci; ++icn) {
        const double* ip = inb + static_cast<size_t>(icn) * in_plane;
        const double* wk = weight.data() + (static_cast<size_t>(oc) * ci + icn) * 9;
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const double wv = wk[ky * 3 + kx];
            if (wv == 0.0) continue;
            const int y0 = std::max(0, 1 - ky), y1 = std::min(h, h + 1 - ky);
            const int x0 = std::max(0, 1 - kx), x1 = std::min(w, w + 1 - kx);
            for (int y = y0; y < y1; ++y) {
              const double* irow = ip + static_cast<size_t>(y + ky - 1) * w + (kx - 1);
              double* orow = op + static_cast<size_t>(y) * w;
              for (int x = x0; x < x1; ++x) orow[x] += wv * irow[x];
            }
          }
      }
    }
  }
}

inline void conv3x3_backward(const std::vector<double>& in, int n, int ci, int h, int w,
                             const std::vector<double>& weight, int co,
                             const std::vector<double>& dout, std::vector<double>& din,
                             std::vector<double>& dweight, std::vector<double>& dbias) {
  din.assign(in.size(), 0.0);
  const size_t plane = static_cast<size_t>(h) * w;
  for (int b = 0; b < n; ++b) {
    const double* inb = in.data() + static_cast<size_t>(b) * ci * plane;
    const double* dob = dout.data() + static_cast<size_t>(b) * co * plane;
    double* dib = din.data() + static_cast<size_t>(b) * ci * plane;
    for (int oc = 0; oc < co; ++oc) {
      const double* dop = dob + static_cast<size_t>(oc) * plane;
      double acc_b = 0.0;
      for (size_t i = 0; i < plane; ++i) acc_b += dop[i];
      dbias[static_cast<size_t>(oc)] += acc_b;
      for (int icn = 0; icn < ci; ++icn) {
        const double* ip = inb + static_cast<size_t>(icn) * plane;
        double* dip = dib + static_cast<size_t>(icn) * plane;
        const double* wk = weight.data() + (static_cast<size_t>(oc) * ci + icn) * 9;
        double* dwk = dweight.data() + (static_cast<size_t>(oc) * ci + icn) * 9;
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const int y0 = std::max(0, 1 - ky), y1 = std::min(h, h + 1 - ky);
            const int x0 = std::max(0, 1 - kx), x1 = std::min(w, w + 1 - kx);
            double acc_w = 0.0;
            const double wv = wk[ky * 3 + kx];
            for (int y = y0; y < y1; ++y) {
              const double* irow = ip + static_cast<size_t>(y + ky - 1) * w + (kx - 1);
              double* dirow = dip + static_cast<size_t>(y + ky - 1) * w + (kx - 1);
              const double* dorow = dop + static_cast<size_t>(y) * w;
              for (int x = x0; x < x1; ++x) {
                acc_w += irow[x] * dorow[x];
                dirow[x] += wv * dorow[x];
              }
            }
            dwk[ky * 3 + kx] += acc_w;
          }
      }
    }
  }
}

inline void relu_forward(std::vector<double>& a) {
  for (double& v : a) v = v > 0.0 ? v : 0.0;
}

inline void relu_backward(const std::vector<double>& activated, std::vector<double>& grad) {
  for (size_t i = 0; i < grad.size(); ++i)
    if (activated[i] <= 0.0) grad[i] = 0.0;
}

inline void avgpool2_forward(const std::vector<double>& in, int n, int c, int h, int w,
                             std::vector<double>& out) {
  const int oh = h / 2, ow = w / 2;
  out.assign(static_cast<size_t>(n) * c * oh * ow, 0.0);
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const double* ip = in.data() + (static_cast<size_t>(b) * c + ch) * h * w;
      double* op = out.data() + (static_cast<size_t>(b) * c + ch) * oh * ow;
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
          op[static_cast<size_t>(y) * ow + x] =
              0.25 * (ip[static_cast<size_t>(2 * y) * w + 2 * x] +
                      ip[static_cast<size_t>(2 * y) * w + 2 * x + 1] +
                      ip[static_cast<size_t>(2 * y + 1) * w + 2 * x] +
                      ip[static_cast<size_t>(2 * y + 1) * w + 2 * x + 1]);
    }
}

inline void avgpool2_backward(int n, int c, int h, int w, const std::vector<double>& dout,
                              std::vector<double>& din) {
  const int oh = h / 2, ow = w / 2;
  din.assign(static_cast<size_t>(n) * c * h * w, 0.0);
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      double* dip = din.data() + (static_cast<size_t>(b) * c + ch) * h * w;
      const double* dop = dout.data() + (static_cast<size_t>(b) * c + ch) * oh * ow;
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
          const double g = 0.25 * dop[static_cast<size_t>(y) * ow + x];
          dip[static_cast<size_t>(2 * y) * w + 2 * x] += g;
          dip[static_cast<size_t>(2 * y) * w + 2 * x + 1] += g;
          dip[static_cast<size_t>(2 * y + 1) * w + 2 * x] += g;
          dip[static_cast<size_t>(2 * y + 1) * w + 2 * x + 1] += g;
        }
    }
}

// Row-wise softmax with max subtraction.
inline void softmax_rows(Matrix& m) {
  for (int i = 0; i < m.rows; ++i) {
    auto row = m.row(i);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double sum = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : row) v /= sum;
  }
}

// dL/dlogits given dL/dprobs and the softmax output.
inline Matrix softmax_backward(const Matrix& probs, const Matrix& dprobs) {
  Matrix dz(probs.rows, probs.cols);
  for (int i = 0; i < probs.rows; ++i) {
    double dot = 0.0;
    for (int c = 0; c < probs.cols; ++c) dot += dprobs.at(i, c) * probs.at(i, c);
    for (int c = 0; c < probs.cols; ++c)
      dz.at(i, c) = probs.at(i, c) * (dprobs.at(i, c) - dot);
  }
  return dz;
}

}  // namespace kernels

// Desk-scale reference classifier: five 3x3 conv stages (two 2x avg-pools),
// global average pooling, and a linear softmax head. Width w gives channel
// progression [w, w, 2w, 2w, 4w]; ~107k parameters at the default w=28 for
// 10 classes. Deterministic He-normal init from the init stream. There is
// no dropout or batch-norm, so train_mode does not change the computation.
class SmallConvNet final : public Classifier {
public:
  SmallConvNet(int in_channels, int side, int num_classes, int width, uint64_t seed)
      : in_c_(in_channels), side_(side), k_(num_classes), width_(width) {
    if (num_classes < 2) throw ValidationError("model: num_classes must be >= 2");
    if (width < 1) throw ValidationError("model: width must be >= 1");
    if (side < 4 || side % 4 != 0)
      throw ValidationError("model: image side must be a positive multiple of 4");
    const int w = width;
    channels_ = {in_c_, w, w, 2 * w, 2 * w, 4 * w};
    RngStream init(seed, streams::kInit);
    for (int l = 0; l < kConvLayers; ++l) {
      add_tensor("conv" + std::to_string(l + 1) + ".w",
                 {channels_[static_cast<size_t>(l + 1)], channels_[static_cast<size_t>(l)], 3, 3},
                 init, channels_[static_cast<size_t>(l)] * 9);
      // small constant bias keeps dead-input patches off the exact relu kink
      add_tensor("conv" + std::to_string(l + 1) + ".b",
                 {channels_[static_cast<size_t>(l + 1)]}, init, 0, 0.01);
    }
    add_tensor("fc.w", {k_, channels_.back()}, init, channels_.back());
    add_tensor("fc.b", {k_}, init, 0);
  }

  Matrix forward(const ImageBatch& batch, bool /*train_mode*/) override {
    if (batch.c != in_c_ || batch.h != side_ || batch.w != side_)
      throw ValidationError("model: input shape mismatch");
    const int n = batch.n;
    stage_in_.assign(kConvLayers + 1, {});
    relu_out_.assign(kConvLayers, {});
    dims_.assign(kConvLayers + 1, {});

    // stage 0: input as doubles
    stage_in_[0].resize(batch.data.size());
    for (size_t i = 0; i < batch.data.size(); ++i) stage_in_[0][i] = batch.data[i];
    dims_[0] = {in_c_, side_};

    for (int l = 0; l < kConvLayers; ++l) {
      const auto& wt = params_.tensors[static_cast<size_t>(2 * l)];
      const auto& bt = params_.tensors[static_cast<size_t>(2 * l + 1)];
      std::vector<double> conv;
      kernels::conv3x3_forward(stage_in_[static_cast<size_t>(l)], n, dims_[static_cast<size_t>(l)].first,
                               dims_[static_cast<size_t>(l)].second, dims_[static_cast<size_t>(l)].second,
                               wt.v, bt.v, channels_[static_cast<size_t>(l + 1)], conv);
      kernels::relu_forward(conv);
      relu_out_[static_cast<size_t>(l)] = conv;
      int out_side = dims_[static_cast<size_t>(l)].second;
      if (pool_after(l)) {
        std::vector<double> pooled;
        kernels::avgpool2_forward(conv, n, channels_[static_cast<size_t>(l + 1)], out_side, out_side, pooled);
        conv = std::move(pooled);
        out_side /= 2;
      }
      stage_in_[static_cast<size_t>(l + 1)] = std::move(conv);
      dims_[static_cast<size_t>(l + 1)] = {channels_[static_cast<size_t>(l + 1)], out_side};
    }

    // global average pool + dense head + softmax
    const int cf = dims_[kConvLayers].first;
    const int sf = dims_[kConvLayers].second;
    const double inv_area = 1.0 / (sf * sf);
    gap_ = Matrix(n, cf);
    for (int b = 0; b < n; ++b)
      for (int ch = 0; ch < cf; ++ch) {
        const double* p = stage_in_[kConvLayers].data() + (static_cast<size_t>(b) * cf + ch) * sf * sf;
        double s = 0.0;
        for (int i = 0; i < sf * sf; ++i) s += p[i];
        gap_.at(b, ch) = s * inv_area;
      }

    const auto& fw = params_.tensors[static_cast<size_t>(2 * kConvLayers)];
    const auto& fb = params_.tensors[static_cast<size_t>(2 * kConvLayers + 1)];
    probs_ = Matrix(n, k_);
    for (int b = 0; b < n; ++b)
      for (int o = 0; o < k_; ++o) {
        double s = fb.v[static_cast<size_t>(o)];
        for (int ch = 0; ch < cf; ++ch) s += fw.v[static_cast<size_t>(o) * cf + ch] * gap_.at(b, ch);
        probs_.at(b, o) = s;
      }
    kernels::softmax_rows(probs_);
    return probs_;
  }

  void backward(const Matrix& dprobs) override {
    const int n = dprobs.rows;
    if (n * k_ != probs_.rows * probs_.cols || dprobs.cols != k_)
      throw ValidationError("model: backward called with mismatched dprobs");
    Matrix dz = kernels::softmax_backward(probs_, dprobs);

    const int cf = dims_[kConvLayers].first;
    const int sf = dims_[kConvLayers].second;
    auto& fw = params_.tensors[static_cast<size_t>(2 * kConvLayers)];
    auto& fb = params_.tensors[static_cast<size_t>(2 * kConvLayers + 1)];
    Matrix dgap(n, cf);
    for (int b = 0; b < n; ++b)
      for (int o = 0; o < k_; ++o) {
        const double g = dz.at(b, o);
        fb.g[static_cast<size_t>(o)] += g;
        for (int ch = 0; ch < cf; ++ch) {
          fw.g[static_cast<size_t>(o) * cf + ch] += g * gap_.at(b, ch);
          dgap.at(b, ch) += g * fw.v[static_cast<size_t>(o) * cf + ch];
        }
      }

    // spread GAP gradient over spatial positions
    std::vector<double> dcur(static_cast<size_t>(n) * cf * sf * sf);
    const double inv_area = 1.0 / (sf * sf);
    for (int b = 0; b < n; ++b)
      for (int ch = 0; ch < cf; ++ch) {
        const double g = dgap.at(b, ch) * inv_area;
        double* p = dcur.data() + (static_cast<size_t>(b) * cf + ch) * sf * sf;
        for (int i = 0; i < sf * sf; ++i) p[i] = g;
      }

    for (int l = kConvLayers - 1; l >= 0; --l) {
      const int ci = dims_[static_cast<size_t>(l)].first;
      const int si = dims_[static_cast<size_t>(l)].second;
      const int co = channels_[static_cast<size_t>(l + 1)];
      if (pool_after(l)) {
        std::vector<double> dunpooled;
        kernels::avgpool2_backward(n, co, si, si, dcur, dunpooled);
        dcur = std::move(dunpooled);
      }
      kernels::relu_backward(relu_out_[static_cast<size_t>(l)], dcur);
      auto& wt = params_.tensors[static_cast<size_t>(2 * l)];
      std::vector<double> din;
      kernels::conv3x3_backward(stage_in_[static_cast<size_t>(l)], n, ci, si, si, wt.v, co, dcur, din,
                                wt.g, params_.tensors[static_cast<size_t>(2 * l + 1)].g);
      dcur = std::move(din);
    }
  }

  ParamSet& params() override { return params_; }
  const ParamSet& params() const override { return params_; }
  int num_classes() const override { return k_; }

  std::unique_ptr<Classifier> clone() const override {
    return std::make_unique<SmallConvNet>(*this);
  }

  // Copies every conv tensor from `donor` (head tensors fc.* keep their
  // current values). Used to initialize from a pretrained model whose class
  // count differs.
  void load_trunk(const ParamSet& donor) {
    for (auto& t : params_.tensors) {
      if (t.name.rfind("conv", 0) != 0) continue;
      const ParamTensor* src = nullptr;
      for (const auto& s : donor.tensors)
        if (s.name == t.name) src = &s;
      if (!src || src->v.size() != t.v.size())
        throw ValidationError("load_trunk: donor tensor missing or mismatched: " + t.name);
      t.v = src->v;
    }
  }

  int side() const { return side_; }
  int in_channels() const { return in_c_; }
  int width() const { return width_; }

private:
  static constexpr int kConvLayers = 5;
  static bool pool_after(int l) { return l == 1 || l == 3; }

  void add_tensor(const std::string& name, std::vector<int> shape, RngStream& init, int fan_in,
                  double fill = 0.0) {
    ParamTensor t;
    t.name = name;
    t.shape = std::move(shape);
    size_t count = 1;
    for (int s : t.shape) count *= static_cast<size_t>(s);
    t.v.resize(count, fill);
    t.g.resize(count, 0.0);
    if (fan_in > 0) {
      const double stddev = std::sqrt(2.0 / fan_in);
      Rng rng = init.at(params_.tensors.size());
      for (double& v : t.v) v = stddev * rng.normal();
    }
    params_.tensors.push_back(std::move(t));
  }

  int in_c_, side_, k_, width_;
  std::vector<int> channels_;
  ParamSet params_;

  // forward caches
  std::vector<std::vector<double>> stage_in_;   // input to each conv stage (+ final features)
  std::vector<std::vector<double>> relu_out_;   // post-relu, pre-pool, per stage
  std::vector<std::pair<int, int>> dims_;       // (channels, side) per stage
  Matrix gap_;
  Matrix probs_;
};

inline std::unique_ptr<SmallConvNet> build_reference_model(int num_classes, int width,
                                                           uint64_t seed, int in_channels = 1,
                                                           int side = 32) {
  return std::make_unique<SmallConvNet>(in_channels, side, num_classes, width, seed);
}

}  // namespace realmix
