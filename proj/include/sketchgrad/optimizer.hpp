#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "sketchgrad/common.hpp"
#include "sketchgrad/estimators.hpp"
#include "sketchgrad/federated.hpp"
#include "sketchgrad/problems.hpp"
#include "sketchgrad/rng.hpp"
#include "sketchgrad/sketch.hpp"
#include "sketchgrad/theory.hpp"

namespace sketchgrad {

// ---------------------------------------------------------------------------
// Theorem-derived stepsizes: the largest gamma each convergence statement
// permits, computed exactly from its formula.

enum class Theorem {
  GdSmooth,
  GdPl,
  Sgd,
  SgdPl,
  Mvr,
  MvrPl,
  Page,
  PagePl,
  Qgd,
  QgdPl,
  Marina,
  MarinaPl,
  Ef21,
  Ef21Pl,
  NonsmoothConstant,
};

inline const char* theorem_name(Theorem t) {
  switch (t) {
    case Theorem::GdSmooth: return "gd";
    case Theorem::GdPl: return "gd-pl";
    case Theorem::Sgd: return "sgd";
    case Theorem::SgdPl: return "sgd-pl";
    case Theorem::Mvr: return "mvr";
    case Theorem::MvrPl: return "mvr-pl";
    case Theorem::Page: return "page";
    case Theorem::PagePl: return "page-pl";
    case Theorem::Qgd: return "qgd";
    case Theorem::QgdPl: return "qgd-pl";
    case Theorem::Marina: return "marina";
    case Theorem::MarinaPl: return "marina-pl";
    case Theorem::Ef21: return "ef21";
    case Theorem::Ef21Pl: return "ef21-pl";
    case Theorem::NonsmoothConstant: return "nonsmooth-const";
  }
  return "?";
}

namespace detail {
inline double need(const TheoryField& f, const char* constant, Theorem t) {
  if (!f.present())
    throw ConfigError(std::string("stepsize for theorem '") + theorem_name(t) +
                      "': missing constant " + constant +
                      (f.note.empty() ? "" : " (" + f.note + ")"));
  return *f.value;
}
inline double need_pos(double v, const char* what, Theorem t) {
  if (!(v > 0.0))
    throw ConfigError(std::string("stepsize for theorem '") + theorem_name(t) + "': " + what +
                      " must be positive");
  return v;
}
}  // namespace detail

inline double theoretical_stepsize(Theorem thm, const TheoryParams& tp) {
  using detail::need;
  const double lmin = tp.lambda_min_p;
  const double lmax = tp.lambda_max_p;
  auto ratio_inv = [&](Theorem t) {  // (lambda_max / lambda_min)^{-1}
    detail::need_pos(lmax, "lambda_max_p", t);
    detail::need_pos(lmin, "lambda_min_p", t);
    return lmin / lmax;
  };

  switch (thm) {
    case Theorem::GdSmooth:
    case Theorem::GdPl:
      return 1.0 / detail::need_pos(need(tp.l, "L", thm), "L", thm);

    case Theorem::Sgd: {
      double l = need(tp.l, "L", thm);
      double a1 = need(tp.a1, "A1", thm);
      double b1 = need(tp.b1, "B1", thm);
      double g = std::numeric_limits<double>::infinity();
      if (a1 > 0.0) g = std::min(g, 1.0 / std::sqrt(l * a1 * lmax * tp.t_horizon));
      if (b1 > 0.0) g = std::min(g, ratio_inv(thm) / (l * b1));
      if (!std::isfinite(g))
        throw ConfigError("stepsize for theorem 'sgd': A1 = B1 = 0 leaves gamma unbounded");
      return g;
    }
    case Theorem::SgdPl: {
      double l = need(tp.l, "L", thm);
      double a1 = need(tp.a1, "A1", thm);
      double b1 = need(tp.b1, "B1", thm);
      double mu = detail::need_pos(need(tp.mu, "mu", thm), "mu", thm);
      double g = 2.0 / (mu * lmin);
      if (a1 > 0.0) g = std::min(g, mu * lmin / (2.0 * l * a1 * lmax));
      if (b1 > 0.0) g = std::min(g, ratio_inv(thm) / (l * b1));
      return g;
    }
    case Theorem::Mvr: {
      double l = need(tp.l, "L", thm);
      double b = detail::need_pos(need(tp.b, "b", thm), "b", thm);
      return 1.0 / (l * (1.0 + std::sqrt(2.0 * lmax * (1.0 - b) * (1.0 - b) / b)));
    }
    case Theorem::MvrPl: {
      double l = need(tp.l, "L", thm);
      double b = detail::need_pos(need(tp.b, "b", thm), "b", thm);
      double mu = detail::need_pos(need(tp.mu, "mu", thm), "mu", thm);
      double g1 =
          1.0 / (l * (1.0 + std::sqrt(2.0 * (1.0 - b) * (1.0 - b) * lmax / (b * (2.0 - b)))));
      return std::min(g1, b / (2.0 * mu * lmin));
    }
    case Theorem::Page: {
      double l = need(tp.l, "L", thm);
      double q = detail::need_pos(need(tp.q, "q", thm), "q", thm);
      return 1.0 / (l * (1.0 + std::sqrt((1.0 - q) / q * lmax)));
    }
    case Theorem::PagePl: {
      double l = need(tp.l, "L", thm);
      double q = detail::need_pos(need(tp.q, "q", thm), "q", thm);
      double mu = detail::need_pos(need(tp.mu, "mu", thm), "mu", thm);
      double g1 = 1.0 / (l * (1.0 + 2.0 * std::sqrt((1.0 - q) / q * lmax)));
      return std::min(g1, q / (2.0 * mu * lmin));
    }
    case Theorem::Qgd: {
      double l = need(tp.l, "L", thm);
      double omega = need(tp.omega, "omega", thm);
      double g = ratio_inv(thm) / l;
      if (omega > 0.0)
        g = std::min(g, 1.0 / (l * std::sqrt(omega / tp.clients * lmax * tp.t_horizon)));
      return g;
    }
    case Theorem::QgdPl: {
      double l = need(tp.l, "L", thm);
      double omega = need(tp.omega, "omega", thm);
      double mu = detail::need_pos(need(tp.mu, "mu", thm), "mu", thm);
      double g = std::min(2.0 / (mu * lmin), ratio_inv(thm) / l);
      if (omega > 0.0)
        g = std::min(g, mu * ratio_inv(thm) / (2.0 * l * l * omega / tp.clients));
      return g;
    }
    case Theorem::Marina: {
      double l = need(tp.l, "L", thm);
      double omega = need(tp.omega, "omega", thm);
      double q = detail::need_pos(need(tp.q, "q", thm), "q", thm);
      return 1.0 /
             (l * (1.0 + std::sqrt(lmax * (1.0 - q) / q * omega / tp.clients)));
    }
    case Theorem::MarinaPl: {
      double l = need(tp.l, "L", thm);
      double omega = need(tp.omega, "omega", thm);
      double q = detail::need_pos(need(tp.q, "q", thm), "q", thm);
      double mu = detail::need_pos(need(tp.mu, "mu", thm), "mu", thm);
      double g1 =
          1.0 / (l * (1.0 + std::sqrt(2.0 * lmax * (1.0 - q) / q * omega / tp.clients)));
      return std::min(g1, q / (2.0 * mu * lmin));
    }
    case Theorem::Ef21: {
      double l = need(tp.l, "L", thm);
      double beta = detail::need_pos(need(tp.beta, "beta", thm), "beta", thm);
      double root = std::sqrt(1.0 - beta);
      return 1.0 / (l * (1.0 + std::sqrt(lmax * (1.0 - beta)) / (1.0 - root)));
    }
    case Theorem::Ef21Pl: {
      double l = need(tp.l, "L", thm);
      double beta = detail::need_pos(need(tp.beta, "beta", thm), "beta", thm);
      double mu = detail::need_pos(need(tp.mu, "mu", thm), "mu", thm);
      double root = std::sqrt(1.0 - beta);
      double g1 = 1.0 / (l * (1.0 + std::sqrt(2.0 * lmax * (1.0 - beta)) / (1.0 - root)));
      return std::min(g1, (1.0 + root) / (2.0 * mu * lmin));
    }
    case Theorem::NonsmoothConstant: {
      double l0 = detail::need_pos(need(tp.l0, "L0", thm), "L0", thm);
      double alpha = detail::need_pos(need(tp.alpha_scale, "alpha", thm), "alpha", thm);
      double r0 = need(tp.r0, "R0", thm);
      return r0 / (l0 * std::sqrt(alpha * tp.t_horizon));
    }
  }
  throw ConfigError("unknown theorem");
}

// gamma_t = (f(W^t) - f*) / ||subgrad f(W^t)||_F^2; returns 0 at the optimum
// (the caller treats that as convergence).
inline double polyak_stepsize(double f_w, double f_star, double subgrad_sq_norm) {
  if (f_star > f_w + 1e-12 * std::max(1.0, std::abs(f_w)))
    throw InputError("polyak stepsize: f* exceeds f(W)");
  if (subgrad_sq_norm == 0.0) {
    if (f_w - f_star > 1e-12 * std::max(1.0, std::abs(f_w)))
      throw InputError("polyak stepsize: zero subgradient with f(W) > f*");
    return 0.0;
  }
  double gap = std::max(f_w - f_star, 0.0);
  return gap / subgrad_sq_norm;
}

// ---------------------------------------------------------------------------
// One Bernoulli-coin projected update: with probability p a fresh left
// sketch projects the estimator from the left, otherwise a fresh right
// sketch projects from the right; only the chosen side's stream is consumed.

struct StepResult {
  Matrix next;
  SketchSide side = SketchSide::Left;
  Matrix projection;
};

inline StepResult bernoulli_step(const Matrix& w, const Matrix& g, double p,
                                 const std::optional<SketchSpec>& left,
                                 const std::optional<SketchSpec>& right, double gamma,
                                 RngStream& coin_rng, RngStream& left_rng,
                                 RngStream& right_rng) {
  if (w.rows() != g.rows() || w.cols() != g.cols())
    throw ShapeError("bernoulli_step: W and G shapes differ");
  require(gamma > 0.0, "bernoulli_step: gamma must be positive");
  require(p >= 0.0 && p <= 1.0, "bernoulli_step: p must lie in [0, 1]");

  StepResult out;
  bool take_left = coin_rng.bernoulli(p);
  if (take_left) {
    require(left.has_value(), "bernoulli_step: left sketch spec missing");
    if (left->ambient_dim != w.rows())
      throw ShapeError("bernoulli_step: left sketch dim does not match rows of W");
    Matrix s = sample_sketch(*left, left_rng);
    out.projection = projection_from_sketch(s, SketchSide::Left);
    out.side = SketchSide::Left;
    out.next = w - gamma * (out.projection * g);
  } else {
    require(right.has_value(), "bernoulli_step: right sketch spec missing");
    if (right->ambient_dim != w.cols())
      throw ShapeError("bernoulli_step: right sketch dim does not match cols of W");
    Matrix s = sample_sketch(*right, right_rng);
    out.projection = projection_from_sketch(s, SketchSide::Right);
    out.side = SketchSide::Right;
    out.next = w - gamma * (g * out.projection);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-step Lyapunov values (the appendix per-proof forms).

enum class LyapunovKind { Plain, Phi1, Phi2, Phi3 };

struct LyapunovContext {
  double f = 0.0;
  double f_star = 0.0;
  double gap = 0.0;         // ||G - grad f(W)||^2 (Phi1 / Phi2)
  double client_gap = 0.0;  // (1/M) sum_l ||G_l - grad f_l(W)||^2 (Phi3)
  double gamma = 0.0;
  double lambda_max_p = 0.0;
  double b = 1.0;
  double q = 1.0;
  double beta = 1.0;
};

inline double lyapunov(LyapunovKind kind, const LyapunovContext& c) {
  double base = c.f - c.f_star;
  switch (kind) {
    case LyapunovKind::Plain: return base;
    case LyapunovKind::Phi1:
      return base + c.gamma * c.lambda_max_p / (2.0 * c.b * (2.0 - c.b)) * c.gap;
    case LyapunovKind::Phi2:
      return base + c.gamma * c.lambda_max_p / (2.0 * c.q) * c.gap;
    case LyapunovKind::Phi3: {
      double denom = 1.0 - std::sqrt(1.0 - c.beta);
      return base + c.gamma * c.lambda_max_p / (2.0 * denom) * c.client_gap;
    }
  }
  return base;
}

// ---------------------------------------------------------------------------
// The chain driver.

enum class StepsizePolicyKind { Constant, OverL, FromTheorem, Polyak };

struct StepsizePolicy {
  StepsizePolicyKind kind = StepsizePolicyKind::Constant;
  double value = 1.0;  // gamma for Constant; multiplier c for OverL / FromTheorem
  Theorem theorem = Theorem::GdSmooth;
};

enum class ReportRule { Uniform, Weighted };

struct DriverConfig {
  double p = 0.5;
  int t_steps = 100;
  StepsizePolicy stepsize;
  std::optional<SketchSpec> left, right;
  EstimatorKind estimator = EstimatorKind::Gd;
  EstimatorParams eparams;
  // optional (alpha, r, eta) metadata; checked against gamma = alpha*eta/r
  std::optional<double> alpha_meta;
  std::optional<int> rank_meta;
  std::optional<double> eta_meta;
  std::uint64_t seed = 0;
  ReportRule report = ReportRule::Uniform;
  double stop_grad_sq = 0.0;  // 0 disables the threshold
  Matrix w0;                  // empty: zeros
};

struct TraceRow {
  int iter = 0;
  double f = 0.0;
  double grad_sq_norm = 0.0;
  double estimator_gap = 0.0;
  double lyapunov = std::numeric_limits<double>::quiet_NaN();
  double stepsize = 0.0;
  double comm_scalars = 0.0;
  char side = '-';
};

struct RunTrace {
  std::vector<TraceRow> rows;
  double gamma = 0.0;
  double delta0 = std::numeric_limits<double>::quiet_NaN();
  double min_grad_sq = std::numeric_limits<double>::quiet_NaN();
  double avg_grad_sq = std::numeric_limits<double>::quiet_NaN();
  double weighted_grad_sq = std::numeric_limits<double>::quiet_NaN();
  double final_f = std::numeric_limits<double>::quiet_NaN();
  double avg_iterate_f = std::numeric_limits<double>::quiet_NaN();  // non-smooth runs
  bool lyapunov_tracked = false;
  bool diverged = false;
  int diverged_at = -1;
  bool converged_early = false;
  double wall_seconds = 0.0;
};

// optional per-iteration observer: (t, W^t, G^t)
using ChainObserver = std::function<void(int, const Matrix&, const Matrix&)>;

inline RunTrace run_chain(const DriverConfig& cfg, const Problem& problem,
                          FederatedState* fed = nullptr,
                          const ChainObserver& observer = {}) {
  require(cfg.t_steps >= 1, "run_chain: chain length must be positive");
  require(cfg.p >= 0.0 && cfg.p <= 1.0, "run_chain: p must lie in [0, 1]");
  if (cfg.p > 0.0) {
    require(cfg.left.has_value(), "run_chain: p > 0 needs a left sketch spec");
    if (cfg.left->ambient_dim != problem.param_rows)
      throw ConfigError("run_chain: left sketch dim must equal param rows");
  }
  if (cfg.p < 1.0) {
    require(cfg.right.has_value(), "run_chain: p < 1 needs a right sketch spec");
    if (cfg.right->ambient_dim != problem.param_cols)
      throw ConfigError("run_chain: right sketch dim must equal param cols");
  }
  const bool smooth = problem.is_smooth();
  if (!smooth) {
    require(cfg.estimator == EstimatorKind::Gd,
            "run_chain: the non-smooth driver uses the subgradient estimator");
    require(fed == nullptr, "run_chain: federated estimators need a smooth problem");
  }
  if (cfg.stepsize.kind == StepsizePolicyKind::Polyak) {
    require(!smooth, "run_chain: the Polyak policy applies to the non-smooth driver");
    require(problem.opt_value.has_value(), "run_chain: the Polyak policy needs a known f*");
  }

  auto t_start = std::chrono::steady_clock::now();
  RngBundle bundle(cfg.seed);
  RngStream coin_rng = bundle.make_stream("bernoulli-p");
  RngStream left_rng = bundle.make_stream("sketch/left");
  RngStream right_rng = bundle.make_stream("sketch/right");
  RngStream data_rng = bundle.make_stream("data-sampling");

  RngStream spectral_rng = bundle.make_stream("spectral-mc");
  SpectralWeights weights = spectral_weights(cfg.p, cfg.left, cfg.right,
                                             SpectralMethod::Analytic, spectral_rng);

  // theory constants; needed for theorem stepsizes, Lyapunov coefficients
  // and the weighted reporting rule
  DeriveContext dctx;
  dctx.w0 = cfg.w0.size() ? cfg.w0 : Matrix::Zero(problem.param_rows, problem.param_cols);
  dctx.g0 = cfg.eparams.g0;
  dctx.p = cfg.p;
  dctx.left = cfg.left;
  dctx.right = cfg.right;
  dctx.estimator = cfg.estimator;
  dctx.eparams = cfg.eparams;
  dctx.t_horizon = cfg.t_steps;
  TheoryParams theory = derive_constants(problem, dctx, fed);

  double gamma = 0.0;
  switch (cfg.stepsize.kind) {
    case StepsizePolicyKind::Constant: gamma = cfg.stepsize.value; break;
    case StepsizePolicyKind::OverL:
      gamma = cfg.stepsize.value / detail::need(theory.l, "L", Theorem::GdSmooth);
      break;
    case StepsizePolicyKind::FromTheorem:
      gamma = cfg.stepsize.value * theoretical_stepsize(cfg.stepsize.theorem, theory);
      break;
    case StepsizePolicyKind::Polyak: gamma = 0.0; break;
  }
  if (cfg.stepsize.kind != StepsizePolicyKind::Polyak)
    require(gamma > 0.0, "run_chain: stepsize must be positive");
  if (cfg.alpha_meta && cfg.rank_meta && cfg.eta_meta &&
      cfg.stepsize.kind != StepsizePolicyKind::Polyak) {
    double implied = *cfg.alpha_meta * *cfg.eta_meta / *cfg.rank_meta;
    if (std::abs(implied - gamma) > 1e-12 * std::max(1.0, std::abs(gamma)))
      throw ConfigError("run_chain: gamma != alpha * eta / r");
  }

  LyapunovKind lyap_kind = LyapunovKind::Plain;
  if (fed && fed->kind == FederatedKind::Marina) lyap_kind = LyapunovKind::Phi2;
  else if (fed && fed->kind == FederatedKind::Ef21) lyap_kind = LyapunovKind::Phi3;
  else if (cfg.estimator == EstimatorKind::Mvr) lyap_kind = LyapunovKind::Phi1;
  else if (cfg.estimator == EstimatorKind::Page) lyap_kind = LyapunovKind::Phi2;

  RunTrace trace;
  trace.lyapunov_tracked = problem.opt_value.has_value();
  double f_star = problem.opt_value.value_or(0.0);

  // weighted reporting: w_t = w_{t-1} / (1 + gamma^2 L A1 lambda_max)
  double weight_decay = 1.0;
  if (cfg.report == ReportRule::Weighted && theory.l.present() && theory.a1.present())
    weight_decay = 1.0 / (1.0 + gamma * gamma * *theory.l * *theory.a1 * weights.lambda_max_p);

  Matrix w = dctx.w0;
  std::optional<EstimatorState> est;
  if (smooth && !fed)
    est = init_estimator(cfg.estimator, cfg.eparams, problem, w);

  Matrix avg_w = Matrix::Zero(w.rows(), w.cols());
  double min_gsq = std::numeric_limits<double>::infinity();
  double sum_gsq = 0.0, wsum_gsq = 0.0, weight = 1.0, weight_total = 0.0;

  trace.rows.reserve(cfg.t_steps);
  for (int t = 0; t < cfg.t_steps; ++t) {
    const Matrix* g = nullptr;
    if (fed && (fed->kind == FederatedKind::Qgd || fed->kind == FederatedKind::FedGd)) {
      g = &qgd_round(*fed, w);  // fresh compressed gradients at the current iterate
    } else if (fed) {
      g = &fed->g;
    } else if (smooth) {
      g = &est->g;
    }

    TraceRow row;
    row.iter = t;
    row.f = problem.value(w);
    double gap = 0.0;
    Matrix subg;
    if (smooth) {
      Matrix grad = problem.gradient(w);
      row.grad_sq_norm = grad.squaredNorm();
      gap = (*g - grad).squaredNorm();
    } else {
      subg = problem.subgradient(w);
      row.grad_sq_norm = subg.squaredNorm();
      g = &subg;
    }
    row.estimator_gap = gap;

    if (!std::isfinite(row.f) || !std::isfinite(row.grad_sq_norm) || !g->allFinite()) {
      trace.diverged = true;
      trace.diverged_at = t;
      break;
    }

    double gamma_t = gamma;
    if (cfg.stepsize.kind == StepsizePolicyKind::Polyak)
      gamma_t = polyak_stepsize(row.f, f_star, row.grad_sq_norm);

    if (trace.lyapunov_tracked) {
      LyapunovContext lc;
      lc.f = row.f;
      lc.f_star = f_star;
      lc.gap = gap;
      lc.client_gap = (fed && lyap_kind == LyapunovKind::Phi3) ? client_gap_mean(*fed, w) : 0.0;
      lc.gamma = gamma_t;
      lc.lambda_max_p = weights.lambda_max_p;
      lc.b = cfg.eparams.momentum_b;
      lc.q = fed && fed->kind == FederatedKind::Marina ? fed->sync_prob_q
                                                       : cfg.eparams.full_prob_q;
      if (fed && !fed->compressors.empty())
        lc.beta = fed->compressors.front().is_contractive()
                      ? fed->compressors.front().beta(fed->dim())
                      : 1.0;
      row.lyapunov = lyapunov(lyap_kind, lc);
    }
    row.stepsize = gamma_t;
    row.comm_scalars = fed ? fed->comm_scalars_total : 0.0;

    if (observer) observer(t, w, *g);
    if (!smooth) avg_w += w;

    min_gsq = std::min(min_gsq, row.grad_sq_norm);
    sum_gsq += row.grad_sq_norm;
    wsum_gsq += weight * row.grad_sq_norm;
    weight_total += weight;
    weight *= weight_decay;

    bool stop_now = cfg.stop_grad_sq > 0.0 && row.grad_sq_norm <= cfg.stop_grad_sq;
    bool polyak_done = cfg.stepsize.kind == StepsizePolicyKind::Polyak && gamma_t == 0.0;
    if (stop_now || polyak_done) {
      trace.rows.push_back(row);
      trace.converged_early = true;
      break;
    }

    StepResult step = bernoulli_step(w, *g, cfg.p, cfg.left, cfg.right, gamma_t, coin_rng,
                                     left_rng, right_rng);
    row.side = step.side == SketchSide::Left ? 'L' : 'R';
    trace.rows.push_back(row);

    if (fed && fed->kind == FederatedKind::Marina)
      marina_round(*fed, step.next, w, data_rng);
    else if (fed && fed->kind == FederatedKind::Ef21)
      ef21_round(*fed, step.next);
    else if (smooth && !fed)
      advance(*est, step.next, w, problem, data_rng);
    w = step.next;
  }

  int n = static_cast<int>(trace.rows.size());
  trace.gamma = gamma;
  if (problem.opt_value && n > 0)
    trace.delta0 = trace.rows.front().f - *problem.opt_value;
  if (n > 0) {
    trace.min_grad_sq = min_gsq;
    trace.avg_grad_sq = sum_gsq / n;
    trace.weighted_grad_sq = weight_total > 0.0 ? wsum_gsq / weight_total : trace.avg_grad_sq;
    trace.final_f = problem.value(w);
  }
  if (!smooth && n > 0) trace.avg_iterate_f = problem.value(avg_w / n);
  trace.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return trace;
}

// The smooth non-convex Table-1 rate bound for the configured estimator,
// evaluated with the per-proof Lyapunov constants. Returns nan when a
// needed constant is absent.
inline double nc_rate_bound(const TheoryParams& tp, EstimatorKind estimator,
                            const FederatedState* fed, double gamma, int t_steps) {
  double lmin = tp.lambda_min_p, lmax = tp.lambda_max_p;
  if (!(lmin > 0.0) || !tp.delta0.present()) return std::numeric_limits<double>::quiet_NaN();
  double d0 = *tp.delta0;
  auto nan = std::numeric_limits<double>::quiet_NaN();
  if (fed) {
    switch (fed->kind) {
      case FederatedKind::FedGd: return 2.0 * d0 / (gamma * lmin * t_steps);
      case FederatedKind::Qgd:
        if (!tp.l.present() || !tp.omega.present() || !tp.delta_star.present()) return nan;
        return 6.0 * d0 / (gamma * lmin * t_steps) +
               2.0 * gamma * *tp.l * *tp.omega * *tp.delta_star / fed->client_count() * lmax /
                   lmin;
      case FederatedKind::Marina: {
        if (!tp.q.present()) return nan;
        double phi0 = d0 + gamma * lmax / (2.0 * *tp.q) * tp.g0_gap.value.value_or(0.0);
        return 2.0 * phi0 / (gamma * lmin * t_steps);
      }
      case FederatedKind::Ef21: {
        if (!tp.beta.present() || !tp.fed_g0_gap.present()) return nan;
        double denom = 1.0 - std::sqrt(1.0 - *tp.beta);
        double phi0 = d0 + gamma * lmax / (2.0 * denom) * *tp.fed_g0_gap;
        return 2.0 * phi0 / (gamma * lmin * t_steps);
      }
    }
  }
  switch (estimator) {
    case EstimatorKind::Gd: return 2.0 * d0 / (gamma * lmin * t_steps);
    case EstimatorKind::Sgd:
      if (!tp.l.present() || !tp.c1.present()) return nan;
      return 6.0 * d0 / (gamma * lmin * t_steps) + gamma * *tp.l * *tp.c1 * lmax / lmin;
    case EstimatorKind::Mvr: {
      if (!tp.b.present() || !tp.sigma_sq.present()) return nan;
      double b = *tp.b;
      double phi0 = d0 + gamma * lmax / (2.0 * b * (2.0 - b)) * tp.g0_gap.value.value_or(0.0);
      return 2.0 * phi0 / (gamma * lmin * t_steps) +
             2.0 * b * *tp.sigma_sq / (2.0 - b) * lmax / lmin;
    }
    case EstimatorKind::Page: {
      if (!tp.q.present()) return nan;
      double phi0 = d0 + gamma * lmax / (2.0 * *tp.q) * tp.g0_gap.value.value_or(0.0);
      return 2.0 * phi0 / (gamma * lmin * t_steps);
    }
  }
  return nan;
}

}  // namespace sketchgrad
