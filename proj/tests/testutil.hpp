#pragma once

#include <cmath>
#include <vector>

#include "sketchgrad/common.hpp"
#include "sketchgrad/problems.hpp"
#include "sketchgrad/rng.hpp"

namespace sgtest {

using sketchgrad::Index;
using sketchgrad::Matrix;
using sketchgrad::Vector;

inline Matrix random_matrix(Index rows, Index cols, sketchgrad::RngStream& rng,
                            double scale = 1.0) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  return m;
}

// central finite differences of problem.value at w
inline Matrix fd_gradient(const sketchgrad::Problem& p, const Matrix& w, double h = 1e-5) {
  Matrix g(w.rows(), w.cols());
  for (Index i = 0; i < w.rows(); ++i)
    for (Index j = 0; j < w.cols(); ++j) {
      Matrix hi = w, lo = w;
      hi(i, j) += h;
      lo(i, j) -= h;
      g(i, j) = (p.value(hi) - p.value(lo)) / (2.0 * h);
    }
  return g;
}

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
};

inline MeanStderr mean_stderr(const std::vector<double>& xs) {
  MeanStderr out;
  if (xs.empty()) return out;
  double s = 0.0;
  for (double x : xs) s += x;
  out.mean = s / xs.size();
  if (xs.size() < 2) return out;
  double v = 0.0;
  for (double x : xs) v += (x - out.mean) * (x - out.mean);
  out.stderr_ = std::sqrt(v / (xs.size() - 1) / xs.size());
  return out;
}

}  // namespace sgtest
