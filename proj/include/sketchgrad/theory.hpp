#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "sketchgrad/common.hpp"
#include "sketchgrad/compression.hpp"
#include "sketchgrad/estimators.hpp"
#include "sketchgrad/federated.hpp"
#include "sketchgrad/problems.hpp"
#include "sketchgrad/rng.hpp"
#include "sketchgrad/sketch.hpp"

namespace sketchgrad {

// One theory constant with provenance. Empirical values carry the probe
// standard error; absent values carry the reason instead of a silent zero.
struct TheoryField {
  std::optional<double> value;
  bool empirical = false;
  double std_error = 0.0;
  std::string note;

  bool present() const { return value.has_value(); }
  double operator*() const { return *value; }

  static TheoryField analytic(double v, std::string note = "") {
    return TheoryField{v, false, 0.0, std::move(note)};
  }
  static TheoryField measured(double v, double se, std::string note = "") {
    return TheoryField{v, true, se, std::move(note)};
  }
  static TheoryField absent(std::string reason) {
    return TheoryField{std::nullopt, false, 0.0, std::move(reason)};
  }
};

// Everything a theorem stepsize or rate bound can consume.
struct TheoryParams {
  TheoryField l;           // smoothness L
  TheoryField mu;          // PL constant
  TheoryField sigma_sq;    // bounded-variance sigma^2
  TheoryField l0;          // non-smooth Lipschitz constant
  TheoryField a1, b1, c1;  // expected smoothness
  TheoryField omega;       // unbiased compression
  TheoryField beta;        // contractive compression
  TheoryField q;           // page / marina full-sync probability
  TheoryField b;           // mvr momentum
  TheoryField delta0;      // f(W^0) - f*
  TheoryField delta_star;  // f* - (1/M) sum f_l*
  TheoryField g0_gap;      // ||G^0 - grad f(W^0)||^2
  TheoryField fed_g0_gap;  // (1/M) sum ||G_l^0 - grad f_l(W^0)||^2
  TheoryField alpha_scale; // E[H] = alpha I (non-smooth analysis)
  TheoryField r0;          // ||W^0 - W*||_F

  double lambda_min_p = 0.0;
  double lambda_max_p = 0.0;
  double p = 1.0;
  int clients = 1;
  int t_horizon = 1;

  std::optional<SketchSpec> left_spec, right_spec;
};

struct DeriveContext {
  Matrix w0;
  std::optional<Matrix> g0;
  double p = 1.0;
  std::optional<SketchSpec> left, right;
  EstimatorKind estimator = EstimatorKind::Gd;
  EstimatorParams eparams;
  int t_horizon = 1;
  SpectralMethod spectral = SpectralMethod::Analytic;
  int spectral_draws = 20000;
  std::uint64_t spectral_seed = 0;
};

inline TheoryParams derive_constants(const Problem& problem, const DeriveContext& ctx,
                                     const FederatedState* fed = nullptr) {
  TheoryParams tp;
  tp.p = ctx.p;
  tp.t_horizon = ctx.t_horizon;
  tp.left_spec = ctx.left;
  tp.right_spec = ctx.right;
  tp.clients = fed ? fed->client_count() : 1;

  if (problem.smoothness)
    tp.l = TheoryField::analytic(*problem.smoothness,
                                 problem.kind == ProblemKind::QuadraticPl
                                     ? "exact spectrum"
                                     : "power-iteration + curvature bound");
  else
    tp.l = TheoryField::absent("problem is non-smooth");
  tp.mu = problem.pl_constant ? TheoryField::analytic(*problem.pl_constant)
                              : TheoryField::absent("no PL certificate for this problem");
  tp.l0 = problem.lipschitz0 ? TheoryField::analytic(*problem.lipschitz0, "(1/m) sum ||D_i||")
                             : TheoryField::absent("smooth problem");

  if (ctx.left || ctx.right) {
    RngStream rng = RngBundle(ctx.spectral_seed).make_stream("spectral-mc");
    SpectralWeights w =
        spectral_weights(ctx.p, ctx.left, ctx.right, ctx.spectral, rng, ctx.spectral_draws);
    tp.lambda_min_p = w.lambda_min_p;
    tp.lambda_max_p = w.lambda_max_p;
  }

  double f0 = problem.value(ctx.w0);
  if (problem.opt_value)
    tp.delta0 = TheoryField::analytic(f0 - *problem.opt_value);
  else
    tp.delta0 = TheoryField::absent("f* unknown for this problem");

  if (problem.is_smooth()) {
    Matrix grad0 = problem.gradient(ctx.w0);
    tp.g0_gap = TheoryField::analytic(ctx.g0 ? (*ctx.g0 - grad0).squaredNorm() : 0.0);
  }

  if (problem.opt_point) {
    tp.r0 = TheoryField::analytic((ctx.w0 - *problem.opt_point).norm());
  } else {
    tp.r0 = TheoryField::absent("W* unknown");
  }

  // E[H] = alpha I holds for both shipped distributions; with mixed sides the
  // effective scalar is the probability-weighted one (only meaningful when
  // min and max coincide).
  if (tp.lambda_min_p > 0.0 && std::abs(tp.lambda_max_p - tp.lambda_min_p) <=
                                   1e-12 * std::max(1.0, tp.lambda_max_p)) {
    tp.alpha_scale = TheoryField::analytic(tp.lambda_min_p);
  } else {
    tp.alpha_scale = TheoryField::absent("expected projection is not a scalar matrix");
  }

  if (problem.is_smooth() && problem.sample_count > 1) {
    double v = empirical_variance(problem, ctx.w0);
    tp.sigma_sq = TheoryField::measured(v, 0.0, "enumeration at W^0");
  } else if (problem.is_smooth()) {
    tp.sigma_sq = TheoryField::analytic(0.0, "single-sample objective");
  }

  if (ctx.estimator == EstimatorKind::Mvr) tp.b = TheoryField::analytic(ctx.eparams.momentum_b);
  if (ctx.estimator == EstimatorKind::Page)
    tp.q = TheoryField::analytic(ctx.eparams.full_prob_q);

  if (ctx.estimator == EstimatorKind::Sgd && !fed) {
    // no closed-form triple for plain finite-sum SGD; empirical convention
    tp.a1 = TheoryField::measured(0.0, 0.0, "finite-sum SGD convention");
    tp.b1 = TheoryField::measured(1.0, 0.0, "second-moment identity");
    if (tp.sigma_sq.present())
      tp.c1 = TheoryField::measured(2.0 * *tp.sigma_sq, 0.0, "2 sigma^2 convention");
  }

  if (fed) {
    Index d = fed->dim();
    const Compressor& c = fed->compressors.front();
    if (c.is_unbiased()) tp.omega = TheoryField::analytic(c.omega(d));
    if (c.is_contractive()) tp.beta = TheoryField::analytic(c.beta(d));
    if (fed->kind == FederatedKind::Marina)
      tp.q = TheoryField::analytic(fed->sync_prob_q);
    if (fed->kind == FederatedKind::Ef21)
      tp.fed_g0_gap = TheoryField::analytic(fed->g0_gap);

    bool optima_known = problem.opt_value.has_value();
    double sum_fl = 0.0;
    for (const Problem& cl : fed->clients) {
      if (!cl.opt_value) {
        optima_known = false;
        break;
      }
      sum_fl += *cl.opt_value;
    }
    if (optima_known) {
      double dstar = *problem.opt_value - sum_fl / fed->client_count();
      tp.delta_star = TheoryField::analytic(dstar, "per-client minimization");
    } else {
      tp.delta_star = TheoryField::absent("client or global optimum unavailable");
    }

    if (fed->kind == FederatedKind::Qgd && tp.omega.present() && tp.l.present()) {
      double a1 = *tp.l * *tp.omega / fed->client_count();
      tp.a1 = TheoryField::analytic(a1, "L omega / M");
      tp.b1 = TheoryField::analytic(1.0);
      if (tp.delta_star.present())
        tp.c1 = TheoryField::analytic(2.0 * a1 * *tp.delta_star, "2 L omega Delta* / M");
      else
        tp.c1 = TheoryField::absent("Delta* unavailable");
    }
  }
  return tp;
}

// ---------------------------------------------------------------------------
// Assumption checks: probe-based pass/fail reports with the tightest ratio.

enum class AssumptionName {
  PositiveExpectedProjection,  // 1
  LowerBounded,                // 2
  LipschitzSmooth,             // 3
  ExpectedSmoothness,          // 4
  BoundedVariance,             // 5
  PlCondition,                 // 6
  ExistenceOfMinimizer,        // 7
  FunctionDissimilarity,       // 8
  ScalingExpectedProjection,   // 9
};

inline const char* assumption_label(AssumptionName a) {
  switch (a) {
    case AssumptionName::PositiveExpectedProjection: return "positive-expected-projection";
    case AssumptionName::LowerBounded: return "lower-bounded";
    case AssumptionName::LipschitzSmooth: return "lipschitz-smooth";
    case AssumptionName::ExpectedSmoothness: return "expected-smoothness";
    case AssumptionName::BoundedVariance: return "bounded-variance";
    case AssumptionName::PlCondition: return "pl-condition";
    case AssumptionName::ExistenceOfMinimizer: return "existence-of-minimizer";
    case AssumptionName::FunctionDissimilarity: return "function-dissimilarity";
    case AssumptionName::ScalingExpectedProjection: return "scaling-expected-projection";
  }
  return "?";
}

struct AssumptionReport {
  AssumptionName name = AssumptionName::LowerBounded;
  bool pass = false;
  double worst_ratio = 0.0;
  std::string detail;
};

namespace detail {
inline Matrix random_probe(Index rows, Index cols, RngStream& rng, double scale = 1.0) {
  Matrix w(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) w(i, j) = scale * rng.normal();
  return w;
}

inline bool subset_enumeration_feasible(const SketchSpec& spec) {
  std::uint64_t count = 1;
  for (int i = 0; i < spec.rank; ++i) {
    count = count * (spec.ambient_dim - i) / (i + 1);
    if (count > 100000) return false;
  }
  return true;
}
}  // namespace detail

inline AssumptionReport check_assumption(AssumptionName name, const Problem& problem,
                                         const TheoryParams& params, int probes,
                                         RngStream& rng) {
  require(probes >= 1, "check_assumption: probes must be positive");
  AssumptionReport rep;
  rep.name = name;
  const Index rows = problem.param_rows, cols = problem.param_cols;

  switch (name) {
    case AssumptionName::PositiveExpectedProjection: {
      rep.worst_ratio = params.lambda_min_p;
      rep.pass = params.lambda_min_p > 0.0;
      rep.detail = "lambda_min_p = " + format_double(params.lambda_min_p);
      break;
    }
    case AssumptionName::LowerBounded: {
      double lo = std::numeric_limits<double>::infinity();
      bool finite = true;
      for (int i = 0; i < probes; ++i) {
        double f = problem.value(detail::random_probe(rows, cols, rng));
        finite = finite && std::isfinite(f);
        lo = std::min(lo, f);
      }
      if (problem.opt_value) lo = std::min(lo, *problem.opt_value);
      rep.pass = finite;
      rep.worst_ratio = lo;
      rep.detail = "min observed f = " + format_double(lo);
      break;
    }
    case AssumptionName::LipschitzSmooth: {
      if (!params.l.present() || !problem.is_smooth()) {
        rep.detail = "L unavailable or problem non-smooth";
        break;
      }
      double worst = 0.0;
      for (int i = 0; i < probes; ++i) {
        Matrix w = detail::random_probe(rows, cols, rng);
        Matrix v = detail::random_probe(rows, cols, rng);
        double dw = (w - v).norm();
        if (dw == 0.0) continue;
        double dg = (problem.gradient(w) - problem.gradient(v)).norm();
        worst = std::max(worst, dg / (*params.l * dw));
      }
      rep.worst_ratio = worst;
      rep.pass = worst <= 1.0 + 1e-9;
      rep.detail = "max ||grad(W)-grad(V)|| / (L ||W-V||)";
      break;
    }
    case AssumptionName::ExpectedSmoothness: {
      if (!params.a1.present() || !params.b1.present() || !params.c1.present() ||
          !problem.opt_value || !problem.is_smooth()) {
        rep.detail = "needs (A1, B1, C1) and f*";
        break;
      }
      // batch-1 finite-sum estimator: E||g||^2 enumerates exactly
      double worst = 0.0;
      for (int i = 0; i < probes; ++i) {
        Matrix w = detail::random_probe(rows, cols, rng);
        double second = 0.0;
        for (int s = 0; s < problem.sample_count; ++s)
          second += problem.sample_gradient(w, s).squaredNorm();
        second /= problem.sample_count;
        double rhs = 2.0 * *params.a1 * (problem.value(w) - *problem.opt_value) +
                     *params.b1 * problem.gradient(w).squaredNorm() + *params.c1;
        if (rhs > 0.0) worst = std::max(worst, second / rhs);
      }
      rep.worst_ratio = worst;
      rep.pass = worst <= 1.0 + 1e-9;
      rep.detail = "max E||g||^2 / (2A1(f-f*) + B1||grad||^2 + C1)";
      break;
    }
    case AssumptionName::BoundedVariance: {
      if (!params.sigma_sq.present() || !problem.is_smooth() || problem.sample_count < 2) {
        rep.detail = "sigma^2 unavailable";
        break;
      }
      double worst = 0.0;
      for (int i = 0; i < probes; ++i) {
        Matrix w = detail::random_probe(rows, cols, rng);
        if (*params.sigma_sq > 0.0)
          worst = std::max(worst, empirical_variance(problem, w) / *params.sigma_sq);
      }
      rep.worst_ratio = worst;
      rep.pass = worst <= 1.0 + 1e-9;
      rep.detail = "max variance(W) / sigma^2; sigma^2 was probed at W^0 only";
      break;
    }
    case AssumptionName::PlCondition: {
      if (!params.mu.present() || !problem.opt_value || !problem.is_smooth()) {
        rep.detail = "mu or f* unavailable";
        break;
      }
      double worst = 0.0;
      for (int i = 0; i < probes; ++i) {
        Matrix w = detail::random_probe(rows, cols, rng);
        double gap = problem.value(w) - *problem.opt_value;
        if (gap <= 0.0) continue;
        double lhs = 0.5 * problem.gradient(w).squaredNorm();
        worst = std::max(worst, *params.mu * gap / lhs);
      }
      rep.worst_ratio = worst;
      rep.pass = worst <= 1.0 + 1e-9;
      rep.detail = "max mu (f - f*) / (||grad||^2 / 2)";
      break;
    }
    case AssumptionName::ExistenceOfMinimizer: {
      if (!problem.opt_point || !problem.opt_value) {
        rep.detail = "no minimizer recorded";
        break;
      }
      double err = std::abs(problem.value(*problem.opt_point) - *problem.opt_value);
      rep.worst_ratio = err;
      rep.pass = err <= 1e-10 * std::max(1.0, std::abs(*problem.opt_value));
      rep.detail = "|f(W*) - f*|";
      break;
    }
    case AssumptionName::FunctionDissimilarity: {
      if (!params.delta_star.present()) {
        rep.detail = params.delta_star.note.empty() ? "Delta* unavailable"
                                                    : params.delta_star.note;
        break;
      }
      rep.worst_ratio = *params.delta_star;
      rep.pass = *params.delta_star >= -1e-12;
      rep.detail = "Delta* = " + format_double(*params.delta_star);
      break;
    }
    case AssumptionName::ScalingExpectedProjection: {
      const std::optional<SketchSpec>& spec =
          params.left_spec ? params.left_spec : params.right_spec;
      if (!spec) {
        rep.detail = "no sketch spec supplied";
        break;
      }
      double alpha = static_cast<double>(spec->rank) / spec->ambient_dim;
      ExpectedProjection est;
      bool exact = spec->dist == SketchDist::CoordinateSubset &&
                   detail::subset_enumeration_feasible(*spec);
      if (exact)
        est = exact_expected_projection(*spec);
      else
        est = estimate_expected_projection(*spec, probes, rng);
      double dev = (est.mean - alpha * Matrix::Identity(spec->ambient_dim, spec->ambient_dim))
                       .cwiseAbs()
                       .maxCoeff();
      rep.worst_ratio = dev;
      rep.pass = exact ? dev == 0.0 : dev <= 5.0 / std::sqrt(static_cast<double>(probes));
      rep.detail = std::string("max |E[H] - alpha I| with alpha = ") + format_double(alpha) +
                   (exact ? " (exhaustive)" : " (monte-carlo)");
      break;
    }
  }
  return rep;
}

}  // namespace sketchgrad
