#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "realmix/error.hpp"
#include "realmix/nn.hpp"

namespace realmix {

// Adaptive-moment gradient descent with decoupled weight decay:
//   m <- b1*m + (1-b1)*g          v <- b2*v + (1-b2)*g^2
//   theta <- theta - lr * mhat/(sqrt(vhat)+eps) - lr * wd * theta
// Bias-corrected moments; the decay term never enters the moments.
class AdamW {
public:
  AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8)
      : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(ParamSet& params) {
    if (m_.empty()) init(params);
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (size_t ti = 0; ti < params.tensors.size(); ++ti) {
      auto& p = params.tensors[ti];
      auto& m = m_[ti];
      auto& v = v_[ti];
      if (m.size() != p.count()) throw ValidationError("optimizer: parameter shape changed");
      for (size_t i = 0; i < p.count(); ++i) {
        const double g = p.g[i];
        m[i] = b1_ * m[i] + (1.0 - b1_) * g;
        v[i] = b2_ * v[i] + (1.0 - b2_) * g * g;
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        p.v[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_) + lr_ * wd_ * p.v[i];
      }
    }
  }

  int64_t steps_taken() const { return t_; }

  // checkpoint access
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void restore(std::vector<std::vector<double>> m, std::vector<std::vector<double>> v, int64_t t) {
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
  }

private:
  void init(const ParamSet& params) {
    m_.resize(params.tensors.size());
    v_.resize(params.tensors.size());
    for (size_t i = 0; i < params.tensors.size(); ++i) {
      m_[i].assign(params.tensors[i].count(), 0.0);
      v_[i].assign(params.tensors[i].count(), 0.0);
    }
  }

  double lr_, wd_, b1_, b2_, eps_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// shadow' = decay*shadow + (1-decay)*params, elementwise.
inline void ema_update(const ParamSet& params, ParamSet& shadow, double decay) {
  if (!(decay >= 0.0 && decay <= 1.0)) throw ValidationError("ema_update: decay must be in [0, 1]");
  if (params.tensors.size() != shadow.tensors.size())
    throw ValidationError("ema_update: collections differ");
  for (size_t t = 0; t < params.tensors.size(); ++t) {
    const auto& p = params.tensors[t];
    auto& s = shadow.tensors[t];
    if (p.count() != s.count()) throw ValidationError("ema_update: shape mismatch at " + p.name);
    for (size_t i = 0; i < p.count(); ++i) s.v[i] = decay * s.v[i] + (1.0 - decay) * p.v[i];
  }
}

}  // namespace realmix
