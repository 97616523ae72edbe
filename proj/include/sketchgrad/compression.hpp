#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "sketchgrad/common.hpp"
#include "sketchgrad/rng.hpp"

namespace sketchgrad {

enum class CompressorKind { Identity, RandK, TopK, StochasticDither };

// Randomized compression operators acting on the row-major flattening of a
// matrix (d = rows * cols). Unbiased kinds declare omega with
// E||Q(X) - X||^2 <= omega ||X||^2; contractive kinds declare beta with
// ||C(X) - X||^2 <= (1 - beta) ||X||^2.
//
// An unbiased compressor with contractive_scaling set applies Q(X)/(omega+1),
// which is contractive with beta = 1/(omega+1).
struct Compressor {
  CompressorKind kind = CompressorKind::Identity;
  int k = 0;        // rand-k / top-k
  int levels = 0;   // dither
  bool contractive_scaling = false;

  bool is_unbiased() const {
    if (contractive_scaling) return false;
    return kind == CompressorKind::Identity || kind == CompressorKind::RandK ||
           kind == CompressorKind::StochasticDither;
  }
  bool is_contractive() const {
    return kind == CompressorKind::Identity || kind == CompressorKind::TopK ||
           contractive_scaling;
  }

  double omega(Index d) const {
    switch (kind) {
      case CompressorKind::Identity: return 0.0;
      case CompressorKind::RandK: return static_cast<double>(d) / k - 1.0;
      case CompressorKind::StochasticDither: {
        double s = levels;
        return std::min(d / (s * s), std::sqrt(static_cast<double>(d)) / s);
      }
      case CompressorKind::TopK:
        throw UnsupportedError("top-k is contractive, not unbiased");
    }
    return 0.0;
  }

  double beta(Index d) const {
    if (contractive_scaling) return 1.0 / (omega_unscaled(d) + 1.0);
    switch (kind) {
      case CompressorKind::Identity: return 1.0;
      case CompressorKind::TopK: return static_cast<double>(k) / d;
      default: throw UnsupportedError("compressor kind has no contraction parameter");
    }
  }

  double omega_unscaled(Index d) const {
    Compressor c = *this;
    c.contractive_scaling = false;
    return c.omega(d);
  }

  void validate(Index d) const {
    if (kind == CompressorKind::RandK || kind == CompressorKind::TopK) {
      require(k >= 1, "compressor: k must be positive");
      if (k > d)
        throw ConfigError("compressor: k = " + std::to_string(k) + " exceeds d = " +
                          std::to_string(d));
    }
    if (kind == CompressorKind::StochasticDither)
      require(levels >= 1, "compressor: dither needs at least one level");
  }
};

inline Compressor identity_compressor() { return Compressor{CompressorKind::Identity, 0, 0}; }
inline Compressor rand_k_compressor(int k) { return Compressor{CompressorKind::RandK, k, 0}; }
inline Compressor top_k_compressor(int k) { return Compressor{CompressorKind::TopK, k, 0}; }
inline Compressor dither_compressor(int levels) {
  return Compressor{CompressorKind::StochasticDither, 0, levels};
}
inline Compressor scaled_to_contractive(Compressor c) {
  require(c.is_unbiased(), "contractive scaling applies to unbiased compressors");
  c.contractive_scaling = true;
  return c;
}

inline Matrix compress(const Compressor& c, const Matrix& x, RngStream& rng) {
  Index d = x.size();
  c.validate(d);
  if (c.kind == CompressorKind::Identity) return x;

  Vector v = flatten(x);
  Vector out = Vector::Zero(d);
  switch (c.kind) {
    case CompressorKind::RandK: {
      // k coordinates uniformly without replacement, scaled by d/k
      std::vector<Index> pool(d);
      for (Index i = 0; i < d; ++i) pool[i] = i;
      double scale = static_cast<double>(d) / c.k;
      for (int t = 0; t < c.k; ++t) {
        Index j = t + static_cast<Index>(rng.below(d - t));
        std::swap(pool[t], pool[j]);
        out(pool[t]) = scale * v(pool[t]);
      }
      break;
    }
    case CompressorKind::TopK: {
      // k largest magnitudes, ties broken by lowest flat index
      std::vector<Index> idx(d);
      std::iota(idx.begin(), idx.end(), Index{0});
      std::partial_sort(idx.begin(), idx.begin() + c.k, idx.end(), [&](Index a, Index b) {
        double ma = std::abs(v(a)), mb = std::abs(v(b));
        if (ma != mb) return ma > mb;
        return a < b;
      });
      for (int t = 0; t < c.k; ++t) out(idx[t]) = v(idx[t]);
      break;
    }
    case CompressorKind::StochasticDither: {
      // probabilistic rounding onto the s-level grid of [0, max|x|]
      double u = v.cwiseAbs().maxCoeff();
      if (u == 0.0) break;
      double s = c.levels;
      for (Index i = 0; i < d; ++i) {
        double a = std::abs(v(i)) / u * s;
        double lo = std::floor(a);
        double frac = a - lo;
        double level = lo + (rng.uniform() < frac ? 1.0 : 0.0);
        out(i) = (v(i) < 0.0 ? -1.0 : 1.0) * level * u / s;
      }
      break;
    }
    default: break;
  }
  Matrix q = unflatten(out, x.rows(), x.cols());
  if (c.contractive_scaling) q /= c.omega_unscaled(d) + 1.0;
  return q;
}

// Scalars sent per compressed matrix. Convention: one transmitted index
// counts as one scalar, so rand-k / top-k cost 2k; dither sends d entries of
// log2(s+1) bits each, counted in 64-bit scalar equivalents; identity sends
// everything.
inline double comm_scalars(const Compressor& c, Index d) {
  switch (c.kind) {
    case CompressorKind::Identity: return static_cast<double>(d);
    case CompressorKind::RandK:
    case CompressorKind::TopK: return 2.0 * c.k;
    case CompressorKind::StochasticDither:
      return d * std::log2(static_cast<double>(c.levels) + 1.0) / 64.0;
  }
  return static_cast<double>(d);
}

// ---------------------------------------------------------------------------
// Property-test oracle for the compressor contracts. For unbiased kinds it
// reports the worst relative bias of the empirical mean and the worst
// empirical second-moment ratio; for contractive kinds the worst contraction
// ratio. rand-k with few subsets is checked by exhaustive enumeration
// (exact), everything else by Monte Carlo.
struct CompressorReport {
  double max_bias = 0.0;        // max over probes of ||mean Q(X) - X|| / ||X||
  double max_moment_ratio = 0.0;  // empirical omega (unbiased) or 1 - beta floor (contractive)
  bool exhaustive = false;
};

namespace detail {

template <typename Fn>
inline void for_each_subset(Index d, int k, Fn&& fn) {
  std::vector<Index> subset(k);
  for (int i = 0; i < k; ++i) subset[i] = i;
  while (true) {
    fn(subset);
    int i = k - 1;
    while (i >= 0 && subset[i] == d - k + i) --i;
    if (i < 0) break;
    ++subset[i];
    for (int j = i + 1; j < k; ++j) subset[j] = subset[j - 1] + 1;
  }
}

inline std::uint64_t n_choose_k(Index d, int k) {
  std::uint64_t c = 1;
  for (int i = 0; i < k; ++i) c = c * (d - i) / (i + 1);
  return c;
}

}  // namespace detail

inline CompressorReport verify_compressor(const Compressor& c, int probes, Index rows,
                                          Index cols, RngStream& rng, int trials = 2000) {
  require(probes >= 1, "verify_compressor: probes must be positive");
  Index d = rows * cols;
  c.validate(d);
  CompressorReport rep;

  for (int pr = 0; pr < probes; ++pr) {
    Matrix x(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) x(i, j) = rng.normal();
    double xnorm2 = x.squaredNorm();

    if (c.kind == CompressorKind::TopK || c.contractive_scaling) {
      Matrix q = compress(c, x, rng);
      rep.max_moment_ratio = std::max(rep.max_moment_ratio, (q - x).squaredNorm() / xnorm2);
      continue;
    }
    if (c.kind == CompressorKind::Identity) {
      Matrix q = compress(c, x, rng);
      rep.max_bias = std::max(rep.max_bias, (q - x).norm() / std::sqrt(xnorm2));
      rep.exhaustive = true;
      continue;
    }
    if (c.kind == CompressorKind::RandK && detail::n_choose_k(d, c.k) <= 5000) {
      // exact: uniform over subsets
      Vector v = flatten(x);
      Vector mean = Vector::Zero(d);
      double second = 0.0;
      std::uint64_t count = 0;
      double scale = static_cast<double>(d) / c.k;
      detail::for_each_subset(d, c.k, [&](const std::vector<Index>& subset) {
        Vector q = Vector::Zero(d);
        for (Index i : subset) q(i) = scale * v(i);
        mean += q;
        second += (q - v).squaredNorm();
        ++count;
      });
      mean /= static_cast<double>(count);
      rep.max_bias = std::max(rep.max_bias, (mean - v).norm() / std::sqrt(xnorm2));
      rep.max_moment_ratio = std::max(rep.max_moment_ratio, second / count / xnorm2);
      rep.exhaustive = true;
      continue;
    }
    Matrix mean = Matrix::Zero(rows, cols);
    double second = 0.0;
    for (int t = 0; t < trials; ++t) {
      Matrix q = compress(c, x, rng);
      mean += q;
      second += (q - x).squaredNorm();
    }
    mean /= trials;
    rep.max_bias = std::max(rep.max_bias, (mean - x).norm() / std::sqrt(xnorm2));
    rep.max_moment_ratio = std::max(rep.max_moment_ratio, second / trials / xnorm2);
  }
  return rep;
}

}  // namespace sketchgrad
