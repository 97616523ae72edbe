#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "sketchgrad/problems.hpp"
#include "testutil.hpp"

using namespace sketchgrad;
using sgtest::fd_gradient;
using sgtest::random_matrix;
using Catch::Approx;

namespace {
Problem scalar_linreg() {
  // D = [1], b = [0], lambda = 1, one sample: f(x) = x^2/2 + x^2/(1+x^2)
  Matrix d(1, 1);
  d << 1.0;
  Vector b(1);
  b << 0.0;
  return make_linreg_from_data(d, b, 1, 1, 1.0);
}
}  // namespace

TEST_CASE("identity quadratic has exact constants") {
  Problem p = make_identity_quadratic(2, 1);
  REQUIRE(p.opt_value.value() == 0.0);
  REQUIRE(p.smoothness.value() == 1.0);
  REQUIRE(p.pl_constant.value() == 1.0);
  REQUIRE(p.opt_point->isZero(0.0));

  Matrix x(2, 1);
  x << 3.0, 4.0;
  REQUIRE(p.value(x) == Approx(12.5).margin(1e-14));
  Matrix g = p.gradient(x);
  REQUIRE(g(0, 0) == Approx(3.0).margin(1e-14));
  REQUIRE(g(1, 0) == Approx(4.0).margin(1e-14));
}

TEST_CASE("scalar regularized linreg hand values") {
  Problem p = scalar_linreg();
  Matrix x(1, 1);
  x << 0.0;
  REQUIRE(p.value(x) == 0.0);
  REQUIRE(p.gradient(x)(0, 0) == 0.0);

  x << 1.0;
  // 0.5 * 1 + 1 * (1/2) = 1.0 ; gradient 1 + 2*1/(1+1)^2 = 1.5
  REQUIRE(p.value(x) == Approx(1.0).margin(1e-15));
  REQUIRE(p.gradient(x)(0, 0) == Approx(1.5).margin(1e-15));
}

TEST_CASE("evaluation input validation") {
  Problem p = make_identity_quadratic(2, 2);
  Matrix wrong(3, 2);
  wrong.setZero();
  REQUIRE_THROWS_AS(p.value(wrong), ShapeError);
  Matrix bad(2, 2);
  bad.setZero();
  bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_AS(p.value(bad), InputError);
  REQUIRE_THROWS_AS(p.subgradient(Matrix::Zero(2, 2)), UnsupportedError);
}

TEST_CASE("factory validation") {
  LinRegConfig bad;
  bad.samples = 0;
  bad.param_rows = 2;
  bad.param_cols = 2;
  REQUIRE_THROWS_AS(make_linreg(bad), ConfigError);
  REQUIRE_THROWS_AS(make_linreg_from_data(Matrix::Identity(2, 2), Vector::Zero(2), 2, 1, -1.0),
                    ConfigError);
  QuadraticPlConfig q;
  q.param_rows = 0;
  REQUIRE_THROWS_AS(make_quadratic_pl(q), ConfigError);
}

TEST_CASE("linreg smoothness matches an independent spectral oracle") {
  LinRegConfig cfg;
  cfg.samples = 500;
  cfg.param_rows = 8;
  cfg.param_cols = 8;
  cfg.noise = 20.0;
  cfg.effective_rank = 8;
  cfg.seed = 42;
  cfg.reg_weight_spectral = true;  // lambda = ||D||_2
  Problem p = make_linreg(cfg);

  Eigen::BDCSVD<Matrix> svd(p.data);
  double sigma = svd.singularValues()(0);
  REQUIRE(p.reg_weight == Approx(sigma).epsilon(1e-6));

  // oracle: 1-D grid search for the regularizer curvature + exact sigma
  double curv = 0.0;
  for (int i = 0; i <= 400000; ++i) {
    double x = -10.0 + 20.0 * i / 400000.0;
    double u = 1.0 + x * x;
    curv = std::max(curv, std::abs(2.0 * (1.0 - 3.0 * x * x) / (u * u * u)));
  }
  double oracle = sigma * sigma / cfg.samples + p.reg_weight * curv;
  REQUIRE(p.smoothness.value() == Approx(oracle).epsilon(0.05));
}

TEST_CASE("lipschitz spot-check on random pairs") {
  LinRegConfig cfg;
  cfg.samples = 60;
  cfg.param_rows = 3;
  cfg.param_cols = 4;
  cfg.noise = 1.0;
  cfg.effective_rank = 4;
  cfg.seed = 3;
  cfg.reg_weight = 2.5;
  Problem p = make_linreg(cfg);
  RngStream rng(17);
  for (int t = 0; t < 50; ++t) {
    Matrix w = random_matrix(3, 4, rng);
    Matrix v = random_matrix(3, 4, rng);
    double lhs = (p.gradient(w) - p.gradient(v)).norm();
    REQUIRE(lhs <= p.smoothness.value() * (w - v).norm() * (1.0 + 1e-9));
  }
}

TEST_CASE("gradient matches central finite differences") {
  RngStream rng(5);
  LinRegConfig cfg;
  cfg.samples = 40;
  cfg.param_rows = 2;
  cfg.param_cols = 3;
  cfg.noise = 0.5;
  cfg.effective_rank = 3;
  cfg.seed = 9;
  cfg.reg_weight = 1.3;
  Problem lin = make_linreg(cfg);
  QuadraticPlConfig qc;
  qc.param_rows = 2;
  qc.param_cols = 3;
  qc.mu = 0.3;
  qc.l_max = 2.0;
  qc.seed = 4;
  Problem quad = make_quadratic_pl(qc);

  for (const Problem* p : {&lin, &quad}) {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      Matrix w = random_matrix(2, 3, rng);
      Matrix g = p->gradient(w);
      Matrix fd = fd_gradient(*p, w);
      worst = std::max(worst, (g - fd).norm() / std::max(1.0, g.norm()));
    }
    REQUIRE(worst <= 1e-4);
  }
}

TEST_CASE("single-sample problems have sample_grad equal to grad") {
  Problem p = scalar_linreg();
  Matrix x(1, 1);
  x << 0.7;
  REQUIRE(p.sample_gradient(x, 0)(0, 0) == p.gradient(x)(0, 0));
}

TEST_CASE("finite-sum consistency by enumeration") {
  Matrix d(4, 2);
  d << 1.0, 2.0, -0.5, 1.5, 3.0, -1.0, 0.25, 0.75;
  Vector b(4);
  b << 0.5, -1.0, 2.0, 0.0;
  Problem p = make_linreg_from_data(d, b, 2, 1, 0.8);
  RngStream rng(8);
  for (int t = 0; t < 5; ++t) {
    Matrix w = random_matrix(2, 1, rng);
    Matrix avg = Matrix::Zero(2, 1);
    for (int i = 0; i < p.sample_count; ++i) avg += p.sample_gradient(w, i);
    avg /= p.sample_count;
    Matrix g = p.gradient(w);
    REQUIRE((avg - g).norm() <= 1e-12 * std::max(1.0, g.norm()));

    double favg = 0.0;
    for (int i = 0; i < p.sample_count; ++i) {
      double r = p.data.row(i).dot(flatten(w)) - p.target(i);
      double fi = 0.5 * p.sample_count * p.data_weight * r * r;
      for (Index j = 0; j < 2; ++j)
        fi += p.reg_weight * w(j, 0) * w(j, 0) / (1.0 + w(j, 0) * w(j, 0));
      favg += fi;
    }
    REQUIRE(favg / p.sample_count == Approx(p.value(w)).epsilon(1e-12));
  }
  REQUIRE_THROWS_AS(p.sample_gradient(Matrix::Zero(2, 1), 4), IndexError);
  REQUIRE_THROWS_AS(p.sample_gradient(Matrix::Zero(2, 1), -1), IndexError);
}

TEST_CASE("bounded variance probe is finite and matches enumeration") {
  Matrix d(4, 2);
  d << 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, -1.0, 1.0;
  Vector b(4);
  b << 1.0, 2.0, 3.0, 4.0;
  Problem p = make_linreg_from_data(d, b, 2, 1, 0.0);
  Matrix w = Matrix::Zero(2, 1);
  double v = empirical_variance(p, w);
  REQUIRE(std::isfinite(v));
  Matrix g = p.gradient(w);
  double direct = 0.0;
  for (int i = 0; i < 4; ++i) direct += (p.sample_gradient(w, i) - g).squaredNorm();
  REQUIRE(v == Approx(direct / 4.0).epsilon(1e-14));
}

TEST_CASE("PL certificate") {
  SECTION("identity quadratic is tight at every probe") {
    Problem p = make_identity_quadratic(3, 2);
    RngStream rng(13);
    for (int t = 0; t < 25; ++t) {
      Matrix w = random_matrix(3, 2, rng);
      double lhs = 0.5 * p.gradient(w).squaredNorm();
      double rhs = p.pl_constant.value() * (p.value(w) - p.opt_value.value());
      REQUIRE(lhs == Approx(rhs).margin(1e-10));
    }
  }
  SECTION("anisotropic quadratic satisfies the inequality") {
    QuadraticPlConfig qc;
    qc.param_rows = 2;
    qc.param_cols = 2;
    qc.mu = 0.25;
    qc.l_max = 1.5;
    qc.seed = 77;
    Problem p = make_quadratic_pl(qc);
    REQUIRE(p.value(*p.opt_point) == Approx(0.0).margin(1e-10));
    RngStream rng(14);
    for (int t = 0; t < 25; ++t) {
      Matrix w = random_matrix(2, 2, rng);
      double lhs = 0.5 * p.gradient(w).squaredNorm();
      double rhs = p.pl_constant.value() * (p.value(w) - p.opt_value.value());
      REQUIRE(lhs >= rhs - 1e-10);
    }
  }
}

TEST_CASE("subgradient rules") {
  Matrix d(1, 1);
  d << 1.0;
  Vector b(1);
  b << 0.0;
  Problem p = make_l1_from_data(d, b, 1, 1);
  Matrix x(1, 1);
  x << 2.0;
  REQUIRE(p.subgradient(x)(0, 0) == 1.0);
  x << 0.0;
  REQUIRE(p.subgradient(x)(0, 0) == 0.0);  // midpoint convention at the kink
  REQUIRE_THROWS_AS(p.gradient(x), UnsupportedError);

  L1Config cfg;
  cfg.samples = 4;
  cfg.param_rows = 3;
  cfg.param_cols = 1;
  cfg.seed = 21;
  Problem q = make_nonsmooth_l1(cfg);
  REQUIRE(q.value(*q.opt_point) == Approx(0.0).margin(1e-12));
  RngStream rng(22);
  for (int t = 0; t < 1000; ++t) {
    Matrix w = random_matrix(3, 1, rng, 2.0);
    REQUIRE(q.subgradient(w).norm() <= q.lipschitz0.value() + 1e-12);
  }
}

TEST_CASE("partition consistency") {
  Matrix d(8, 2);
  Vector b(8);
  RngStream gen(31);
  for (int i = 0; i < 8; ++i) {
    d(i, 0) = gen.normal();
    d(i, 1) = gen.normal();
    b(i) = gen.normal();
  }
  Problem p = make_linreg_from_data(d, b, 2, 1, 0.4);

  SECTION("M = 1 reproduces the problem") {
    RngStream rng(1);
    auto clients = partition(p, 1, rng, PartitionScheme::Contiguous, false);
    REQUIRE(clients.size() == 1);
    Matrix w = random_matrix(2, 1, rng);
    REQUIRE(clients[0].value(w) == Approx(p.value(w)).epsilon(1e-12));
  }

  SECTION("N = 8, M = 4 clients average to the global problem") {
    RngStream rng(2);
    auto clients = partition(p, 4, rng, PartitionScheme::Random, false);
    REQUIRE(clients.size() == 4);
    for (const Problem& c : clients) REQUIRE(c.sample_count == 2);
    RngStream probe_rng(3);
    for (int t = 0; t < 5; ++t) {
      Matrix w = random_matrix(2, 1, probe_rng);
      double fsum = 0.0;
      Matrix gsum = Matrix::Zero(2, 1);
      for (const Problem& c : clients) {
        fsum += c.value(w);
        gsum += c.gradient(w);
      }
      REQUIRE(fsum / 4.0 == Approx(p.value(w)).epsilon(1e-12));
      REQUIRE((gsum / 4.0 - p.gradient(w)).norm() <=
              1e-12 * std::max(1.0, p.gradient(w).norm()));
    }
  }

  SECTION("heterogeneous sorted split yields Delta* >= 0") {
    Problem plain = make_linreg_from_data(d, b, 2, 1, 0.0);
    Vector v_star = plain.data.colPivHouseholderQr().solve(plain.target);
    plain.opt_point = unflatten(v_star, 2, 1);
    plain.opt_value = 0.5 * plain.data_weight * (plain.data * v_star - plain.target).squaredNorm();
    RngStream rng(4);
    auto clients = partition(plain, 4, rng, PartitionScheme::SortedByTarget, true);
    double avg = 0.0;
    for (const Problem& c : clients) {
      REQUIRE(c.opt_value.has_value());
      avg += *c.opt_value;
    }
    avg /= 4.0;
    REQUIRE(*plain.opt_value - avg >= -1e-12);
  }

  SECTION("more clients than samples fails") {
    RngStream rng(5);
    REQUIRE_THROWS_AS(partition(p, 9, rng), ConfigError);
  }
}

TEST_CASE("client optima solve exactly for quadratics") {
  QuadraticPlConfig qc;
  qc.param_rows = 2;
  qc.param_cols = 2;
  qc.mu = 0.5;
  qc.l_max = 2.0;
  qc.seed = 10;
  Problem p = make_quadratic_pl(qc);
  RngStream rng(6);
  auto clients = partition(p, 2, rng, PartitionScheme::Random, true);
  // the planted system is consistent, so every client interpolates: f_l* = 0
  for (const Problem& c : clients) {
    REQUIRE(c.opt_value.has_value());
    REQUIRE(*c.opt_value == Approx(0.0).margin(1e-16));
  }
}

TEST_CASE("estimate_opt_value descends to the planted optimum") {
  QuadraticPlConfig qc;
  qc.param_rows = 2;
  qc.param_cols = 1;
  qc.mu = 0.5;
  qc.l_max = 1.0;
  qc.seed = 12;
  Problem p = make_quadratic_pl(qc);
  OptEstimate est = estimate_opt_value(p, 1e-10);
  REQUIRE(est.value == Approx(0.0).margin(1e-14));
  REQUIRE(est.grad_sq_norm <= 1e-20);
}

TEST_CASE("dataset dump / load round trip") {
  LinRegConfig cfg;
  cfg.samples = 12;
  cfg.param_rows = 2;
  cfg.param_cols = 3;
  cfg.noise = 0.1;
  cfg.effective_rank = 2;
  cfg.seed = 123;
  Problem p = make_linreg(cfg);

  std::string path = (std::filesystem::temp_directory_path() / "sg_dataset_test.bin").string();
  dump_dataset(path, p.data, p.target, p.seed);
  Dataset ds = load_dataset(path);
  REQUIRE(ds.seed == 123);
  REQUIRE(ds.data.rows() == p.data.rows());
  REQUIRE((ds.data - p.data).norm() == 0.0);
  REQUIRE((ds.target - p.target).norm() == 0.0);

  // corrupt the magic
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOTMAGIC" << std::string(100, '\0');
  }
  REQUIRE_THROWS_AS(load_dataset(path), InputError);
  std::filesystem::remove(path);
}
