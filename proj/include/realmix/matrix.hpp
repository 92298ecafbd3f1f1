#pragma once

#include <span>
#include <vector>

#include "realmix/error.hpp"

namespace realmix {

// Dense row-major double matrix; rows are per-sample class distributions in
// most of the SSL code.
struct Matrix {
  int rows = 0, cols = 0;
  std::vector<double> d;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), d(static_cast<size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return d[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return d[static_cast<size_t>(r) * cols + c]; }

  std::span<double> row(int r) { return {d.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)}; }
  std::span<const double> row(int r) const {
    return {d.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
  }
};

inline bool is_prob_vector(std::span<const double> p, double tol = 1e-6) {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) return false;
    sum += v;
  }
  return sum > 1.0 - tol && sum < 1.0 + tol;
}

inline int argmax(std::span<const double> p) {
  int best = 0;
  for (size_t i = 1; i < p.size(); ++i)
    if (p[i] > p[static_cast<size_t>(best)]) best = static_cast<int>(i);
  return best;
}

}  // namespace realmix
