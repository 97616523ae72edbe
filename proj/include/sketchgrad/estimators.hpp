#pragma once

#include <optional>
#include <vector>

#include "sketchgrad/common.hpp"
#include "sketchgrad/problems.hpp"
#include "sketchgrad/rng.hpp"

namespace sketchgrad {

enum class EstimatorKind { Gd, Sgd, Mvr, Page };

inline const char* estimator_name(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::Gd: return "gd";
    case EstimatorKind::Sgd: return "sgd";
    case EstimatorKind::Mvr: return "mvr";
    case EstimatorKind::Page: return "page";
  }
  return "?";
}

struct EstimatorParams {
  double momentum_b = 0.5;   // mvr, in (0, 1]
  double full_prob_q = 0.5;  // page, in (0, 1]
  int batch = 1;
  std::optional<Matrix> g0;  // override for G^0 (default: exact gradient)
};

// Base gradient estimator G^t. advance() moves the state from iterate w_old
// to w_new; the same drawn sample indices are used at both evaluation points
// within one MVR/PAGE update.
struct EstimatorState {
  EstimatorKind kind = EstimatorKind::Gd;
  Matrix g;
  Matrix w_prev;
  double momentum_b = 1.0;
  double full_prob_q = 1.0;
  int batch = 1;
  long long full_grad_updates = 0;
  long long cheap_updates = 0;

  // mvr with b = 1 degenerates to a fresh stochastic gradient every step
  bool is_sgd_equivalent() const { return kind == EstimatorKind::Mvr && momentum_b == 1.0; }
};

inline EstimatorState init_estimator(EstimatorKind kind, const EstimatorParams& params,
                                     const Problem& problem, const Matrix& w0) {
  if (kind == EstimatorKind::Mvr)
    require(params.momentum_b > 0.0 && params.momentum_b <= 1.0,
            "estimator: momentum parameter b must lie in (0, 1]");
  if (kind == EstimatorKind::Page)
    require(params.full_prob_q > 0.0 && params.full_prob_q <= 1.0,
            "estimator: full-gradient probability q must lie in (0, 1]");
  require(params.batch >= 1, "estimator: batch size must be positive");

  EstimatorState st;
  st.kind = kind;
  st.momentum_b = params.momentum_b;
  st.full_prob_q = params.full_prob_q;
  st.batch = params.batch;
  st.w_prev = w0;
  if (params.g0) {
    if (params.g0->rows() != w0.rows() || params.g0->cols() != w0.cols())
      throw ShapeError("estimator: supplied G^0 shape does not match the iterate");
    st.g = *params.g0;
  } else {
    st.g = problem.gradient(w0);
  }
  return st;
}

namespace detail {
inline std::vector<int> draw_batch(RngStream& rng, int batch, int n) {
  std::vector<int> idx(batch);
  for (int i = 0; i < batch; ++i) idx[i] = static_cast<int>(rng.below(n));
  return idx;
}
}  // namespace detail

inline void advance(EstimatorState& st, const Matrix& w_new, const Matrix& w_old,
                    const Problem& problem, RngStream& data_rng) {
  if (w_new.rows() != w_old.rows() || w_new.cols() != w_old.cols())
    throw ShapeError("estimator advance: iterate shapes differ");
  switch (st.kind) {
    case EstimatorKind::Gd:
      st.g = problem.gradient(w_new);
      break;
    case EstimatorKind::Sgd: {
      auto idx = detail::draw_batch(data_rng, st.batch, problem.sample_count);
      st.g = problem.batch_gradient(w_new, idx);
      break;
    }
    case EstimatorKind::Mvr: {
      auto idx = detail::draw_batch(data_rng, st.batch, problem.sample_count);
      Matrix fresh = problem.batch_gradient(w_new, idx);
      if (st.momentum_b == 1.0) {
        st.g = std::move(fresh);  // exact SGD reduction, bit for bit
      } else {
        st.g = fresh + (1.0 - st.momentum_b) * (st.g - problem.batch_gradient(w_old, idx));
      }
      break;
    }
    case EstimatorKind::Page: {
      // the index draw precedes the coin, mirroring the update rule's listing
      auto idx = detail::draw_batch(data_rng, st.batch, problem.sample_count);
      bool full = data_rng.bernoulli(st.full_prob_q);  // q = 1: uniform() < 1 always
      if (full) {
        st.g = problem.gradient(w_new);
        ++st.full_grad_updates;
      } else {
        st.g += problem.batch_gradient(w_new, idx) - problem.batch_gradient(w_old, idx);
        ++st.cheap_updates;
      }
      break;
    }
  }
  st.w_prev = w_new;
}

// ||G^t - grad f(W^t)||_F^2, the quantity the variance recursions bound
inline double estimator_gap(const EstimatorState& st, const Problem& problem, const Matrix& w) {
  return (st.g - problem.gradient(w)).squaredNorm();
}

}  // namespace sketchgrad
