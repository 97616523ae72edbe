#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <optional>
#include <vector>

#include "sketchgrad/common.hpp"
#include "sketchgrad/rng.hpp"

namespace sketchgrad {

enum class ProblemKind { RegularizedLinReg, QuadraticPl, NonsmoothL1 };

inline const char* kind_name(ProblemKind k) {
  switch (k) {
    case ProblemKind::RegularizedLinReg: return "regularized-linreg";
    case ProblemKind::QuadraticPl: return "quadratic-pl";
    case ProblemKind::NonsmoothL1: return "nonsmooth-l1";
  }
  return "?";
}

namespace detail {

// Saturating regularizer g(x) = x^2 / (1 + x^2) and its derivatives.
inline double reg_value(double x) { return x * x / (1.0 + x * x); }
inline double reg_grad(double x) {
  double u = 1.0 + x * x;
  return 2.0 * x / (u * u);
}
inline double reg_curv(double x) {
  double u = 1.0 + x * x;
  return 2.0 * (1.0 - 3.0 * x * x) / (u * u * u);
}

// max |g''| over a fine grid of [-10, 10]; the analytic value is 2 at x = 0.
inline double reg_curvature_bound() {
  const int n = 200001;
  double best = 0.0;
  for (int i = 0; i < n; ++i) {
    double x = -10.0 + 20.0 * i / (n - 1);
    best = std::max(best, std::abs(reg_curv(x)));
  }
  return best;
}

// Largest singular value of D by power iteration on D^T D.
inline double spectral_norm(const Matrix& d, int iters = 100, double tol = 1e-8) {
  Vector v = Vector::Ones(d.cols());
  v.normalize();
  double sigma = 0.0;
  for (int it = 0; it < iters; ++it) {
    Vector w = d.transpose() * (d * v);
    double norm = w.norm();
    if (norm == 0.0) return 0.0;
    v = w / norm;
    double next = std::sqrt(norm);
    if (it > 0 && std::abs(next - sigma) <= tol * std::max(1.0, sigma)) {
      sigma = next;
      break;
    }
    sigma = next;
  }
  return sigma;
}

}  // namespace detail

// A synthetic objective over a parameter matrix W (param_rows x param_cols).
// The data matrix acts on the row-major flattening vec(W):
//   quadratic kinds:  f(W) = data_weight/2 * ||D vec(W) - b||^2  [+ lambda * sum_j g(w_j)]
//   nonsmooth-l1:     f(W) = data_weight * ||D vec(W) - b||_1
// Finite-sum structure: row i of D is sample i, and
//   f_i(W) = N * data_weight/2 * (D_i vec(W) - b_i)^2 + lambda * sum_j g(w_j),
// so the regularizer appears in full in every f_i and (1/N) sum_i f_i == f.
struct Problem {
  ProblemKind kind = ProblemKind::QuadraticPl;
  Index param_rows = 0;
  Index param_cols = 0;
  Matrix data;    // N x (param_rows*param_cols)
  Vector target;  // N
  double data_weight = 1.0;
  double reg_weight = 0.0;
  int sample_count = 0;

  std::optional<double> smoothness;    // L
  std::optional<double> pl_constant;   // mu
  std::optional<double> lipschitz0;    // L0, non-smooth kinds
  std::optional<double> opt_value;     // f*
  std::optional<Matrix> opt_point;     // W*
  std::uint64_t seed = 0;

  Index param_size() const { return param_rows * param_cols; }
  bool is_smooth() const { return kind != ProblemKind::NonsmoothL1; }

  void check_input(const Matrix& w) const {
    if (w.rows() != param_rows || w.cols() != param_cols)
      throw ShapeError("parameter shape " + std::to_string(w.rows()) + "x" +
                       std::to_string(w.cols()) + " does not match problem " +
                       std::to_string(param_rows) + "x" + std::to_string(param_cols));
    if (!w.allFinite()) throw InputError("parameter matrix has non-finite entries");
  }

  double value(const Matrix& w) const {
    check_input(w);
    Vector v = flatten(w);
    Vector r = data * v - target;
    double out;
    if (kind == ProblemKind::NonsmoothL1) {
      out = data_weight * r.lpNorm<1>();
    } else {
      out = 0.5 * data_weight * r.squaredNorm();
      if (reg_weight != 0.0)
        for (Index j = 0; j < v.size(); ++j) out += reg_weight * detail::reg_value(v(j));
    }
    return out;
  }

  Matrix gradient(const Matrix& w) const {
    if (!is_smooth()) throw UnsupportedError("gradient of a non-smooth problem; use subgradient");
    check_input(w);
    Vector v = flatten(w);
    Vector g = data_weight * (data.transpose() * (data * v - target));
    if (reg_weight != 0.0)
      for (Index j = 0; j < v.size(); ++j) g(j) += reg_weight * detail::reg_grad(v(j));
    return unflatten(g, param_rows, param_cols);
  }

  Matrix sample_gradient(const Matrix& w, int i) const {
    if (!is_smooth()) throw UnsupportedError("sample gradients are defined for smooth kinds");
    if (i < 0 || i >= sample_count)
      throw IndexError("sample index " + std::to_string(i) + " out of [0, " +
                       std::to_string(sample_count) + ")");
    check_input(w);
    Vector v = flatten(w);
    double r = data.row(i).dot(v) - target(i);
    Vector g = (sample_count * data_weight * r) * data.row(i).transpose();
    if (reg_weight != 0.0)
      for (Index j = 0; j < v.size(); ++j) g(j) += reg_weight * detail::reg_grad(v(j));
    return unflatten(g, param_rows, param_cols);
  }

  Matrix batch_gradient(const Matrix& w, const std::vector<int>& idx) const {
    if (idx.empty()) throw ConfigError("batch gradient needs at least one index");
    Matrix g = sample_gradient(w, idx[0]);
    for (std::size_t k = 1; k < idx.size(); ++k) g += sample_gradient(w, idx[k]);
    return g / static_cast<double>(idx.size());
  }

  // Minimal-norm subgradient: sign(.) with sign(0) = 0 at kinks.
  Matrix subgradient(const Matrix& w) const {
    if (is_smooth()) throw UnsupportedError("subgradient is defined for the non-smooth kind");
    check_input(w);
    Vector v = flatten(w);
    Vector r = data * v - target;
    Vector s(r.size());
    for (Index i = 0; i < r.size(); ++i) s(i) = r(i) > 0.0 ? 1.0 : (r(i) < 0.0 ? -1.0 : 0.0);
    Vector g = data_weight * (data.transpose() * s);
    return unflatten(g, param_rows, param_cols);
  }
};

// (1/N) sum_i ||grad_i(W) - grad(W)||_F^2 by enumeration over all samples.
inline double empirical_variance(const Problem& p, const Matrix& w) {
  Matrix g = p.gradient(w);
  double acc = 0.0;
  for (int i = 0; i < p.sample_count; ++i) acc += (p.sample_gradient(w, i) - g).squaredNorm();
  return acc / p.sample_count;
}

// ---------------------------------------------------------------------------
// Factories

struct LinRegConfig {
  int samples = 0;
  Index param_rows = 0;
  Index param_cols = 0;
  double reg_weight = 0.0;
  bool reg_weight_spectral = false;  // lambda = ||D||_2 measured after generation
  double noise = 0.0;
  double bias = 0.0;
  double tail_strength = 0.1;  // full-rank jitter mixed into the low-rank factor
  int effective_rank = 1;
  std::uint64_t seed = 0;
};

inline Problem make_linreg(const LinRegConfig& cfg) {
  require(cfg.samples > 0 && cfg.param_rows > 0 && cfg.param_cols > 0,
          "regularized-linreg: samples and parameter dims must be positive");
  Index features = cfg.param_rows * cfg.param_cols;
  require(cfg.effective_rank >= 1 && cfg.effective_rank <= features,
          "regularized-linreg: effective rank must be in [1, features]");
  require(cfg.reg_weight >= 0.0 || cfg.reg_weight_spectral,
          "regularized-linreg: reg_weight must be nonnegative");
  require(cfg.noise >= 0.0, "regularized-linreg: noise must be nonnegative");

  RngStream rng(cfg.seed ^ 0x5b1c3a9f2ce4d781ULL);
  int m = cfg.samples;
  int k = cfg.effective_rank;

  Matrix u(m, k), vfac(k, features);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < k; ++j) u(i, j) = rng.normal();
  for (int i = 0; i < k; ++i)
    for (Index j = 0; j < features; ++j) vfac(i, j) = rng.normal();
  Matrix d = u * vfac / std::sqrt(static_cast<double>(k));
  if (cfg.tail_strength > 0.0)
    for (int i = 0; i < m; ++i)
      for (Index j = 0; j < features; ++j) d(i, j) += cfg.tail_strength * rng.normal();

  // standard scaling per column
  for (Index j = 0; j < features; ++j) {
    double mean = d.col(j).mean();
    d.col(j).array() -= mean;
    double sd = std::sqrt(d.col(j).squaredNorm() / m);
    if (sd > 0.0) d.col(j) /= sd;
  }

  Vector w_true(features);
  for (Index j = 0; j < features; ++j) w_true(j) = rng.normal();
  Vector b = d * w_true;
  for (int i = 0; i < m; ++i) b(i) += cfg.noise * rng.normal() + cfg.bias;

  Problem p;
  p.kind = ProblemKind::RegularizedLinReg;
  p.param_rows = cfg.param_rows;
  p.param_cols = cfg.param_cols;
  p.data = std::move(d);
  p.target = std::move(b);
  p.data_weight = 1.0 / m;
  p.reg_weight = cfg.reg_weight_spectral ? detail::spectral_norm(p.data) : cfg.reg_weight;
  p.sample_count = m;
  p.seed = cfg.seed;

  double sigma = detail::spectral_norm(p.data);
  p.smoothness = sigma * sigma / m + p.reg_weight * detail::reg_curvature_bound();
  if (p.reg_weight == 0.0) {
    // plain least squares: exact optimum by direct solve
    Vector v_star = p.data.colPivHouseholderQr().solve(p.target);
    p.opt_point = unflatten(v_star, p.param_rows, p.param_cols);
    p.opt_value = 0.5 * p.data_weight * (p.data * v_star - p.target).squaredNorm();
  }
  return p;
}

struct QuadraticPlConfig {
  Index param_rows = 0;
  Index param_cols = 0;
  double mu = 1.0;
  double l_max = 1.0;
  bool rotate = true;       // false keeps C^T C diagonal (modes = coordinates)
  double planted_scale = 1.0;
  std::uint64_t seed = 0;
};

// f(W) = 1/2 ||C vec(W) - d||^2 with C^T C having spectrum linearly spaced
// in [mu, l_max] and d = C vec(W*), so f* = 0 and both constants are exact.
inline Problem make_quadratic_pl(const QuadraticPlConfig& cfg) {
  require(cfg.param_rows > 0 && cfg.param_cols > 0, "quadratic-pl: dims must be positive");
  require(cfg.mu > 0.0 && cfg.l_max >= cfg.mu, "quadratic-pl: need 0 < mu <= L");
  Index dim = cfg.param_rows * cfg.param_cols;

  RngStream rng(cfg.seed ^ 0x913ab5c87e2d64f3ULL);
  Vector eigs(dim);
  for (Index i = 0; i < dim; ++i)
    eigs(i) = dim == 1 ? cfg.mu : cfg.mu + (cfg.l_max - cfg.mu) * i / double(dim - 1);

  Matrix c;
  if (cfg.rotate) {
    Matrix gauss(dim, dim);
    for (Index i = 0; i < dim; ++i)
      for (Index j = 0; j < dim; ++j) gauss(i, j) = rng.normal();
    Eigen::HouseholderQR<Matrix> qr(gauss);
    Matrix q = qr.householderQ();
    c = eigs.array().sqrt().matrix().asDiagonal() * q.transpose();
  } else {
    c = eigs.array().sqrt().matrix().asDiagonal();
  }

  Vector v_star(dim);
  for (Index j = 0; j < dim; ++j) v_star(j) = cfg.planted_scale * rng.normal();

  Problem p;
  p.kind = ProblemKind::QuadraticPl;
  p.param_rows = cfg.param_rows;
  p.param_cols = cfg.param_cols;
  p.data = std::move(c);
  p.target = p.data * v_star;
  p.data_weight = 1.0;
  p.sample_count = static_cast<int>(dim);
  p.smoothness = cfg.l_max;
  p.pl_constant = cfg.mu;
  p.opt_value = 0.0;
  p.opt_point = unflatten(v_star, p.param_rows, p.param_cols);
  p.seed = cfg.seed;
  return p;
}

// C = I, d = 0: f(W) = 1/2 ||W||_F^2, W* = 0, mu = L = 1, exact in every digit.
inline Problem make_identity_quadratic(Index rows, Index cols) {
  require(rows > 0 && cols > 0, "quadratic-pl: dims must be positive");
  Index dim = rows * cols;
  Problem p;
  p.kind = ProblemKind::QuadraticPl;
  p.param_rows = rows;
  p.param_cols = cols;
  p.data = Matrix::Identity(dim, dim);
  p.target = Vector::Zero(dim);
  p.data_weight = 1.0;
  p.sample_count = static_cast<int>(dim);
  p.smoothness = 1.0;
  p.pl_constant = 1.0;
  p.opt_value = 0.0;
  p.opt_point = Matrix::Zero(rows, cols);
  return p;
}

struct L1Config {
  int samples = 0;
  Index param_rows = 0;
  Index param_cols = 0;
  double planted_scale = 1.0;
  std::uint64_t seed = 0;
};

// f(W) = 1/m ||D vec(W) - b||_1 with b = D vec(W*) planted, so f* = 0 at W*.
inline Problem make_nonsmooth_l1(const L1Config& cfg) {
  require(cfg.samples > 0 && cfg.param_rows > 0 && cfg.param_cols > 0,
          "nonsmooth-l1: samples and dims must be positive");
  Index dim = cfg.param_rows * cfg.param_cols;
  RngStream rng(cfg.seed ^ 0x2fd7c1b39a64e815ULL);

  Matrix d(cfg.samples, dim);
  for (int i = 0; i < cfg.samples; ++i)
    for (Index j = 0; j < dim; ++j) d(i, j) = rng.normal();
  Vector v_star(dim);
  for (Index j = 0; j < dim; ++j) v_star(j) = cfg.planted_scale * rng.normal();

  Problem p;
  p.kind = ProblemKind::NonsmoothL1;
  p.param_rows = cfg.param_rows;
  p.param_cols = cfg.param_cols;
  p.data = std::move(d);
  p.target = p.data * v_star;
  p.data_weight = 1.0 / cfg.samples;
  p.sample_count = cfg.samples;
  double l0 = 0.0;
  for (int i = 0; i < cfg.samples; ++i) l0 += p.data.row(i).norm();
  p.lipschitz0 = l0 / cfg.samples;
  p.opt_value = 0.0;
  p.opt_point = unflatten(v_star, p.param_rows, p.param_cols);
  p.seed = cfg.seed;
  return p;
}

// Construct an l1 problem directly from data (tests use tiny hand instances).
inline Problem make_l1_from_data(Matrix d, Vector b, Index rows, Index cols) {
  Problem p;
  p.kind = ProblemKind::NonsmoothL1;
  p.param_rows = rows;
  p.param_cols = cols;
  p.sample_count = static_cast<int>(d.rows());
  p.data_weight = 1.0 / d.rows();
  double l0 = 0.0;
  for (Index i = 0; i < d.rows(); ++i) l0 += d.row(i).norm();
  p.lipschitz0 = l0 / d.rows();
  p.data = std::move(d);
  p.target = std::move(b);
  return p;
}

inline Problem make_linreg_from_data(Matrix d, Vector b, Index rows, Index cols,
                                     double reg_weight) {
  require(reg_weight >= 0.0, "regularized-linreg: reg_weight must be nonnegative");
  Problem p;
  p.kind = ProblemKind::RegularizedLinReg;
  p.param_rows = rows;
  p.param_cols = cols;
  p.sample_count = static_cast<int>(d.rows());
  p.data_weight = 1.0 / d.rows();
  p.reg_weight = reg_weight;
  double sigma = detail::spectral_norm(d);
  p.smoothness = sigma * sigma / d.rows() + reg_weight * detail::reg_curvature_bound();
  p.data = std::move(d);
  p.target = std::move(b);
  return p;
}

// ---------------------------------------------------------------------------
// Full-gradient minimization; supplies f* estimates where no closed form
// exists (the regularized objective is non-convex).
struct OptEstimate {
  double value = 0.0;
  Matrix point;
  double grad_sq_norm = 0.0;
  int iterations = 0;
};

inline OptEstimate estimate_opt_value(const Problem& p, double grad_norm_tol = 1e-10,
                                      int max_iters = 200000,
                                      std::optional<Matrix> start = std::nullopt) {
  if (!p.is_smooth()) throw UnsupportedError("estimate_opt_value needs a smooth problem");
  if (!p.smoothness) throw ConfigError("estimate_opt_value needs the smoothness constant");
  Matrix w = start ? *start : Matrix::Zero(p.param_rows, p.param_cols);
  double gamma = 1.0 / *p.smoothness;
  OptEstimate out;
  for (out.iterations = 0; out.iterations < max_iters; ++out.iterations) {
    Matrix g = p.gradient(w);
    out.grad_sq_norm = g.squaredNorm();
    if (out.grad_sq_norm <= grad_norm_tol * grad_norm_tol) break;
    w -= gamma * g;
  }
  out.value = p.value(w);
  out.point = std::move(w);
  return out;
}

// ---------------------------------------------------------------------------
// Partitioning into M client problems with (1/M) sum_l f_l == f.

enum class PartitionScheme { Random, SortedByTarget, Contiguous };

inline std::vector<Problem> partition(const Problem& p, int clients, RngStream& rng,
                                      PartitionScheme scheme = PartitionScheme::Random,
                                      bool with_client_optima = true) {
  require(clients >= 1, "partition: client count must be positive");
  if (clients > p.sample_count)
    throw ConfigError("partition: more clients (" + std::to_string(clients) +
                      ") than samples (" + std::to_string(p.sample_count) + ")");

  std::vector<int> order(p.sample_count);
  std::iota(order.begin(), order.end(), 0);
  if (scheme == PartitionScheme::Random) {
    for (int i = p.sample_count - 1; i > 0; --i)
      std::swap(order[i], order[rng.below(static_cast<std::uint64_t>(i) + 1)]);
  } else if (scheme == PartitionScheme::SortedByTarget) {
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return p.target(a) < p.target(b); });
  }

  std::vector<Problem> out;
  out.reserve(clients);
  int base = p.sample_count / clients;
  int extra = p.sample_count % clients;
  int pos = 0;
  for (int l = 0; l < clients; ++l) {
    int rows = base + (l < extra ? 1 : 0);
    Problem c;
    c.kind = p.kind;
    c.param_rows = p.param_rows;
    c.param_cols = p.param_cols;
    c.data.resize(rows, p.param_size());
    c.target.resize(rows);
    for (int i = 0; i < rows; ++i) {
      c.data.row(i) = p.data.row(order[pos]);
      c.target(i) = p.target(order[pos]);
      ++pos;
    }
    c.data_weight = clients * p.data_weight;
    c.reg_weight = p.reg_weight;
    c.sample_count = rows;
    c.seed = p.seed;

    if (p.kind == ProblemKind::QuadraticPl) {
      Eigen::SelfAdjointEigenSolver<Matrix> es(c.data.transpose() * c.data);
      c.smoothness = c.data_weight * es.eigenvalues().maxCoeff();
      double lo = es.eigenvalues().minCoeff();
      if (lo > 0.0) c.pl_constant = c.data_weight * lo;
    } else if (p.kind == ProblemKind::RegularizedLinReg) {
      double sigma = detail::spectral_norm(c.data);
      c.smoothness =
          c.data_weight * sigma * sigma + c.reg_weight * detail::reg_curvature_bound();
    } else {
      double l0 = 0.0;
      for (int i = 0; i < rows; ++i) l0 += c.data.row(i).norm();
      c.lipschitz0 = c.data_weight * l0;
    }

    if (with_client_optima) {
      if (p.kind == ProblemKind::NonsmoothL1) {
        if (rows <= c.param_size()) {
          // underdetermined system: an exact interpolant exists a.s.
          c.opt_value = 0.0;
        }
      } else if (c.reg_weight == 0.0) {
        Vector v_star = c.data.colPivHouseholderQr().solve(c.target);
        c.opt_point = unflatten(v_star, c.param_rows, c.param_cols);
        c.opt_value = 0.5 * c.data_weight * (c.data * v_star - c.target).squaredNorm();
      } else {
        OptEstimate est = estimate_opt_value(c);
        c.opt_value = est.value;
        c.opt_point = est.point;
      }
    }
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Flat binary dataset files: 32-byte header (8-byte magic, u64 rows, u64
// cols, u64 seed), then rows*cols doubles of D row-major, then rows doubles
// of the target. Native (little-endian) byte order.

constexpr char kDatasetMagic[8] = {'S', 'K', 'G', 'D', 'A', 'T', '0', '1'};

inline void dump_dataset(const std::string& path, const Matrix& d, const Vector& b,
                         std::uint64_t seed) {
  if (d.rows() != b.size()) throw ShapeError("dump_dataset: target length must match rows");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("dump_dataset: cannot open " + path);
  f.write(kDatasetMagic, 8);
  std::uint64_t rows = d.rows(), cols = d.cols();
  f.write(reinterpret_cast<const char*>(&rows), 8);
  f.write(reinterpret_cast<const char*>(&cols), 8);
  f.write(reinterpret_cast<const char*>(&seed), 8);
  for (Index i = 0; i < d.rows(); ++i)
    for (Index j = 0; j < d.cols(); ++j) {
      double x = d(i, j);
      f.write(reinterpret_cast<const char*>(&x), 8);
    }
  for (Index i = 0; i < b.size(); ++i) {
    double x = b(i);
    f.write(reinterpret_cast<const char*>(&x), 8);
  }
  if (!f) throw InputError("dump_dataset: write failed for " + path);
}

struct Dataset {
  Matrix data;
  Vector target;
  std::uint64_t seed = 0;
};

inline Dataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("load_dataset: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kDatasetMagic, 8) != 0)
    throw InputError("load_dataset: bad magic in " + path);
  std::uint64_t rows = 0, cols = 0, seed = 0;
  f.read(reinterpret_cast<char*>(&rows), 8);
  f.read(reinterpret_cast<char*>(&cols), 8);
  f.read(reinterpret_cast<char*>(&seed), 8);
  Dataset out;
  out.seed = seed;
  out.data.resize(rows, cols);
  for (std::uint64_t i = 0; i < rows; ++i)
    for (std::uint64_t j = 0; j < cols; ++j) {
      double x;
      f.read(reinterpret_cast<char*>(&x), 8);
      out.data(i, j) = x;
    }
  out.target.resize(rows);
  for (std::uint64_t i = 0; i < rows; ++i) {
    double x;
    f.read(reinterpret_cast<char*>(&x), 8);
    out.target(i) = x;
  }
  if (!f) throw InputError("load_dataset: truncated file " + path);
  return out;
}

}  // namespace sketchgrad
