#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "realmix/nn.hpp"

namespace realmix::testing {

// Central finite differences of `loss()` w.r.t. every parameter in `params`.
// The loss closure must be a pure function of the current parameter values.
inline std::vector<double> fd_gradient(ParamSet& params, const std::function<double()>& loss,
                                       double h_scale = 1e-6) {
  std::vector<double> grad;
  grad.reserve(params.total_count());
  for (auto& t : params.tensors)
    for (size_t i = 0; i < t.count(); ++i) {
      const double saved = t.v[i];
      const double h = h_scale * (1.0 + std::fabs(saved));
      t.v[i] = saved + h;
      const double up = loss();
      t.v[i] = saved - h;
      const double down = loss();
      t.v[i] = saved;
      grad.push_back((up - down) / (2.0 * h));
    }
  return grad;
}

inline std::vector<double> collect_gradient(const ParamSet& params) {
  std::vector<double> grad;
  grad.reserve(params.total_count());
  for (const auto& t : params.tensors) grad.insert(grad.end(), t.g.begin(), t.g.end());
  return grad;
}

// ||a-b|| / max(||a||, ||b||); the standard gradient-check metric.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nb), 1e-300});
  return std::sqrt(diff) / denom;
}

}  // namespace realmix::testing
