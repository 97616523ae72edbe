#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "sketchgrad/common.hpp"
#include "sketchgrad/rng.hpp"

namespace sketchgrad {

enum class SketchSide { Left, Right };
enum class SketchDist { GaussianIid, CoordinateSubset };

// Descriptor of one sketch distribution. Left sketches are ambient_dim x rank
// (columns span the trained subspace of the rows of W); right sketches are
// rank x ambient_dim.
struct SketchSpec {
  SketchSide side = SketchSide::Left;
  SketchDist dist = SketchDist::GaussianIid;
  int rank = 1;
  Index ambient_dim = 1;  // m for left, n for right

  void validate() const {
    require(rank >= 1, "sketch: rank must be positive");
    if (rank > ambient_dim)
      throw ConfigError("sketch: rank " + std::to_string(rank) + " exceeds ambient dim " +
                        std::to_string(ambient_dim));
  }
};

inline Matrix sample_sketch(const SketchSpec& spec, RngStream& rng) {
  spec.validate();
  Index rows = spec.side == SketchSide::Left ? spec.ambient_dim : spec.rank;
  Index cols = spec.side == SketchSide::Left ? spec.rank : spec.ambient_dim;
  Matrix s = Matrix::Zero(rows, cols);
  if (spec.dist == SketchDist::GaussianIid) {
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) s(i, j) = rng.normal();
  } else {
    // r distinct indices, uniform over subsets (partial Fisher-Yates)
    std::vector<Index> pool(spec.ambient_dim);
    for (Index i = 0; i < spec.ambient_dim; ++i) pool[i] = i;
    for (int k = 0; k < spec.rank; ++k) {
      Index j = k + static_cast<Index>(rng.below(spec.ambient_dim - k));
      std::swap(pool[k], pool[j]);
      if (spec.side == SketchSide::Left)
        s(pool[k], k) = 1.0;
      else
        s(k, pool[k]) = 1.0;
    }
  }
  return s;
}

// H_B = B (B^T B)^+ B^T for left sketches, H_A = A^T (A A^T)^+ A for right.
// The pseudoinverse comes from an eigendecomposition of the r x r Gram
// matrix; eigenvalues below tol * lambda_max count as zero, so rank-deficient
// and all-zero sketches degrade to lower-rank projections.
inline Matrix projection_from_sketch(const Matrix& s, SketchSide side, double tol = 1e-12) {
  if (!s.allFinite()) throw InputError("sketch matrix has non-finite entries");
  Matrix gram = side == SketchSide::Left ? Matrix(s.transpose() * s) : Matrix(s * s.transpose());
  if (gram.isIdentity(0.0)) {
    // orthonormal sketch (coordinate subsets): pseudoinverse is exact identity
    return side == SketchSide::Left ? Matrix(s * s.transpose()) : Matrix(s.transpose() * s);
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(gram);
  const Vector& ev = es.eigenvalues();
  double cutoff = tol * std::max(ev.maxCoeff(), 0.0);
  Vector inv_sqrt = Vector::Zero(ev.size());
  for (Index i = 0; i < ev.size(); ++i)
    if (ev(i) > cutoff && ev(i) > 0.0) inv_sqrt(i) = 1.0 / std::sqrt(ev(i));
  // H = M M^T with M = S V diag(1/sqrt(lambda)); building the projection as a
  // Gram matrix keeps it symmetric to the last bit
  Matrix m = (side == SketchSide::Left ? Matrix(s * es.eigenvectors())
                                       : Matrix(s.transpose() * es.eigenvectors())) *
             inv_sqrt.asDiagonal();
  Index dim = m.rows();
  Matrix h = Matrix::Zero(dim, dim);
  h.selfadjointView<Eigen::Lower>().rankUpdate(m);
  h.triangularView<Eigen::StrictlyUpper>() = h.transpose();
  return h;
}

// trace(H) equals the rank of a projection
inline int projection_rank(const Matrix& h) { return static_cast<int>(std::llround(h.trace())); }

struct ProjectionPair {
  Matrix h_left;   // m x m
  Matrix h_right;  // n x n
  int rank_left = 0;
  int rank_right = 0;
};

struct ExpectedProjection {
  Matrix mean;
  double min_eigenvalue = 0.0;
  double max_eigenvalue = 0.0;
};

inline ExpectedProjection estimate_expected_projection(const SketchSpec& spec, int draws,
                                                       RngStream& rng) {
  require(draws >= 1, "estimate_expected_projection: draws must be positive");
  Matrix acc = Matrix::Zero(spec.ambient_dim, spec.ambient_dim);
  for (int t = 0; t < draws; ++t) {
    Matrix s = sample_sketch(spec, rng);
    acc += projection_from_sketch(s, spec.side);
  }
  ExpectedProjection out;
  out.mean = acc / draws;
  Matrix sym = 0.5 * (out.mean + out.mean.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  out.min_eigenvalue = es.eigenvalues().minCoeff();
  out.max_eigenvalue = es.eigenvalues().maxCoeff();
  return out;
}

// Exhaustive mean over all C(d, r) coordinate subsets. Exact oracle: the
// average of 0/1 diagonal projectors is (r/d) I with no sampling error.
inline ExpectedProjection exact_expected_projection(const SketchSpec& spec,
                                                    std::uint64_t max_subsets = 1000000) {
  require(spec.dist == SketchDist::CoordinateSubset,
          "exact_expected_projection: only coordinate-subset sketches enumerate");
  spec.validate();
  Index d = spec.ambient_dim;
  int r = spec.rank;
  std::uint64_t count = 1;
  for (int i = 0; i < r; ++i) {
    count = count * (d - i) / (i + 1);
    require(count <= max_subsets, "exact_expected_projection: too many subsets");
  }
  Matrix acc = Matrix::Zero(d, d);
  std::vector<Index> subset(r);
  for (int i = 0; i < r; ++i) subset[i] = i;
  std::uint64_t seen = 0;
  while (true) {
    Matrix s = Matrix::Zero(spec.side == SketchSide::Left ? d : r,
                            spec.side == SketchSide::Left ? r : d);
    for (int k = 0; k < r; ++k) {
      if (spec.side == SketchSide::Left)
        s(subset[k], k) = 1.0;
      else
        s(k, subset[k]) = 1.0;
    }
    acc += projection_from_sketch(s, spec.side);
    ++seen;
    // next lexicographic r-subset of {0..d-1}
    int i = r - 1;
    while (i >= 0 && subset[i] == d - r + i) --i;
    if (i < 0) break;
    ++subset[i];
    for (int j = i + 1; j < r; ++j) subset[j] = subset[j - 1] + 1;
  }
  ExpectedProjection out;
  out.mean = acc / static_cast<double>(seen);
  Eigen::SelfAdjointEigenSolver<Matrix> es(out.mean);
  out.min_eigenvalue = es.eigenvalues().minCoeff();
  out.max_eigenvalue = es.eigenvalues().maxCoeff();
  return out;
}

// ---------------------------------------------------------------------------
// Probability-weighted extreme eigenvalues of the expected projections:
// lambda_min_p = p * lambda_min(E[H_B]) + (1-p) * lambda_min(E[H_A]),
// and likewise for the max.

enum class SpectralMethod { Analytic, MonteCarlo };

struct SpectralWeights {
  double lambda_min_left = 0.0, lambda_max_left = 0.0;
  double lambda_min_right = 0.0, lambda_max_right = 0.0;
  double p = 0.0;
  double lambda_min_p = 0.0, lambda_max_p = 0.0;
};

inline SpectralWeights spectral_weights(double p, const std::optional<SketchSpec>& left,
                                        const std::optional<SketchSpec>& right,
                                        SpectralMethod method, RngStream& rng,
                                        int draws = 20000) {
  require(p >= 0.0 && p <= 1.0, "spectral_weights: p must lie in [0, 1]");
  if (p > 0.0) require(left.has_value(), "spectral_weights: p > 0 needs a left sketch spec");
  if (p < 1.0) require(right.has_value(), "spectral_weights: p < 1 needs a right sketch spec");

  SpectralWeights w;
  w.p = p;
  auto side_eigs = [&](const SketchSpec& spec) -> std::pair<double, double> {
    if (method == SpectralMethod::Analytic) {
      // E[H] = (r/d) I for i.i.d. Gaussian sketches and for uniform
      // coordinate subsets; both extreme eigenvalues coincide.
      double v = static_cast<double>(spec.rank) / static_cast<double>(spec.ambient_dim);
      return {v, v};
    }
    ExpectedProjection est = estimate_expected_projection(spec, draws, rng);
    return {est.min_eigenvalue, est.max_eigenvalue};
  };
  if (left) {
    auto [lo, hi] = side_eigs(*left);
    w.lambda_min_left = lo;
    w.lambda_max_left = hi;
  }
  if (right) {
    auto [lo, hi] = side_eigs(*right);
    w.lambda_min_right = lo;
    w.lambda_max_right = hi;
  }
  w.lambda_min_p = p * w.lambda_min_left + (1.0 - p) * w.lambda_min_right;
  w.lambda_max_p = p * w.lambda_max_left + (1.0 - p) * w.lambda_max_right;
  if (w.lambda_min_p <= 0.0)
    throw ConfigError("spectral_weights: weighted minimum eigenvalue is not strictly positive");
  return w;
}

// ---------------------------------------------------------------------------
// Factored form of one projected step. Returns the updated iterate computed
// through the low-rank factors and the trained factor itself; the projected
// form W - gamma * H * G must agree to float accuracy. Kept as a
// cross-checking oracle; the drivers work with projections directly.

struct FactoredUpdate {
  Matrix next;    // W + (alpha/r) * B * A_hat   (or B_hat * A)
  Matrix factor;  // A_hat = -eta (B^T B)^+ B^T G   (or B_hat = -eta G A^T (A A^T)^+)
};

inline FactoredUpdate factored_update(const Matrix& w, const Matrix& g, const Matrix& s,
                                      SketchSide side, double gamma, double alpha, int rank,
                                      double eta) {
  if (w.rows() != g.rows() || w.cols() != g.cols())
    throw ShapeError("factored_update: W and G shapes differ");
  require(rank >= 1, "factored_update: rank must be positive");
  if (std::abs(gamma - alpha * eta / rank) > 1e-12 * std::max(1.0, std::abs(gamma)))
    throw ConfigError("factored_update: gamma != alpha * eta / r");

  Matrix gram = side == SketchSide::Left ? Matrix(s.transpose() * s) : Matrix(s * s.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(gram);
  const Vector& ev = es.eigenvalues();
  double cutoff = 1e-12 * std::max(ev.maxCoeff(), 0.0);
  Vector inv = Vector::Zero(ev.size());
  for (Index i = 0; i < ev.size(); ++i)
    if (ev(i) > cutoff && ev(i) > 0.0) inv(i) = 1.0 / ev(i);
  Matrix pinv = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();

  FactoredUpdate out;
  if (side == SketchSide::Left) {
    out.factor = -eta * (pinv * (s.transpose() * g));
    out.next = w + (alpha / rank) * (s * out.factor);
  } else {
    out.factor = -eta * (g * (s.transpose() * pinv));
    out.next = w + (alpha / rank) * (out.factor * s);
  }
  return out;
}

}  // namespace sketchgrad
