#include <catch2/catch_amalgamated.hpp>

#include <vector>

#include "sketchgrad/federated.hpp"
#include "testutil.hpp"

using namespace sketchgrad;
using sgtest::random_matrix;
using Catch::Approx;

namespace {

Problem global_quadratic(Index rows, Index cols, std::uint64_t seed) {
  QuadraticPlConfig qc;
  qc.param_rows = rows;
  qc.param_cols = cols;
  qc.mu = 0.5;
  qc.l_max = 2.0;
  qc.seed = seed;
  return make_quadratic_pl(qc);
}

std::vector<Problem> split(const Problem& p, int m, std::uint64_t seed, bool optima = false) {
  RngStream rng(seed);
  return partition(p, m, rng, PartitionScheme::Random, optima);
}

}  // namespace

TEST_CASE("identity compressors reproduce the uncompressed round") {
  Problem p = global_quadratic(2, 2, 1);
  Matrix w = Matrix::Ones(2, 2);

  SECTION("single client is the plain gradient, bit for bit") {
    RngStream rng(2);
    auto clients = partition(p, 1, rng, PartitionScheme::Contiguous, false);
    FederatedState st = init_federated(FederatedKind::Qgd, clients, identity_compressor(), w,
                                       RngBundle(3));
    const Matrix& g = qgd_round(st, w);
    REQUIRE((g - p.gradient(w)).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("four clients average to the global gradient") {
    FederatedState st = init_federated(FederatedKind::Qgd, split(p, 4, 4), identity_compressor(),
                                       w, RngBundle(5));
    const Matrix& g = qgd_round(st, w);
    REQUIRE((g - p.gradient(w)).norm() <= 1e-12 * std::max(1.0, p.gradient(w).norm()));
  }

  SECTION("qgd with identity equals fed-gd bit for bit") {
    auto clients = split(p, 3, 6);
    FederatedState a = init_federated(FederatedKind::Qgd, clients, identity_compressor(), w,
                                      RngBundle(7));
    FederatedState b = init_federated(FederatedKind::FedGd, clients, identity_compressor(), w,
                                      RngBundle(7));
    for (int t = 0; t < 10; ++t) {
      Matrix probe = w * (t + 1);
      const Matrix g1 = qgd_round(a, probe);
      const Matrix g2 = qgd_round(b, probe);
      REQUIRE((g1 - g2).cwiseAbs().maxCoeff() == 0.0);
    }
    REQUIRE(a.comm_scalars_total == b.comm_scalars_total);
  }
}

TEST_CASE("qgd requires an unbiased compressor") {
  Problem p = global_quadratic(2, 2, 8);
  REQUIRE_THROWS_AS(init_federated(FederatedKind::Qgd, split(p, 2, 9), top_k_compressor(1),
                                   Matrix::Zero(2, 2), RngBundle(1)),
                    ConfigError);
  REQUIRE_THROWS_AS(init_federated(FederatedKind::Marina, split(p, 2, 9), top_k_compressor(1),
                                   Matrix::Zero(2, 2), RngBundle(1)),
                    ConfigError);
}

TEST_CASE("qgd with rand-k is unbiased over many rounds") {
  Problem p = global_quadratic(1, 2, 10);
  Matrix w(1, 2);
  w << 1.0, -2.0;
  Matrix grad = p.gradient(w);
  FederatedState st = init_federated(FederatedKind::Qgd, split(p, 2, 11), rand_k_compressor(1),
                                     w, RngBundle(12));
  Matrix mean = Matrix::Zero(1, 2);
  const int rounds = 10000;
  for (int t = 0; t < rounds; ++t) mean += qgd_round(st, w);
  mean /= rounds;
  // 3 sigma of the round-average noise, estimated generously from omega
  double omega = rand_k_compressor(1).omega(2);
  double sigma = std::sqrt(omega) * grad.norm();
  REQUIRE((mean - grad).norm() <= 3.0 * sigma / std::sqrt(static_cast<double>(rounds)));
}

TEST_CASE("marina shares one coin across clients") {
  Problem p = global_quadratic(2, 2, 13);
  Matrix w0 = Matrix::Ones(2, 2);
  FederatedState st = init_federated(FederatedKind::Marina, split(p, 4, 14),
                                     rand_k_compressor(1), w0, RngBundle(15), 0.5);
  RngStream coin(16);
  RngStream walk(17);
  Matrix w_old = w0;
  int full_rounds = 0, compressed_rounds = 0;
  for (int t = 0; t < 200; ++t) {
    Matrix w_new = w_old + 0.1 * random_matrix(2, 2, walk);
    double before = st.comm_scalars_total;
    marina_round(st, w_new, w_old, coin);
    double sent = st.comm_scalars_total - before;
    // either every client sent d = 4 scalars or every client sent 2k = 2
    if (sent == 4.0 * 4) {
      ++full_rounds;
      for (int l = 0; l < st.client_count(); ++l)
        REQUIRE((st.g_client[l] - st.clients[l].gradient(w_new)).cwiseAbs().maxCoeff() == 0.0);
    } else {
      REQUIRE(sent == 4.0 * 2);
      ++compressed_rounds;
    }
    w_old = w_new;
  }
  REQUIRE(full_rounds > 50);
  REQUIRE(compressed_rounds > 50);
}

TEST_CASE("marina with identity compressors telescopes to the exact gradient") {
  Problem p = global_quadratic(2, 2, 18);
  Matrix w0 = Matrix::Zero(2, 2);
  auto clients = split(p, 3, 19);
  FederatedState st = init_federated(FederatedKind::Marina, clients, identity_compressor(), w0,
                                     RngBundle(20), 0.3);
  FederatedState ref = init_federated(FederatedKind::FedGd, clients, identity_compressor(), w0,
                                      RngBundle(20));
  RngStream coin(21);
  RngStream walk(22);
  Matrix w_old = w0;
  for (int t = 0; t < 50; ++t) {
    Matrix w_new = w_old + 0.2 * random_matrix(2, 2, walk);
    marina_round(st, w_new, w_old, coin);
    const Matrix& exact = fed_gd_round(ref, w_new);
    REQUIRE((st.g - exact).cwiseAbs().maxCoeff() == 0.0);
    w_old = w_new;
  }
}

TEST_CASE("ef21 accepts contractive compressors only after validation") {
  Problem p = global_quadratic(2, 1, 23);
  auto clients = split(p, 2, 24);
  REQUIRE_NOTHROW(init_federated(FederatedKind::Ef21, clients, top_k_compressor(1),
                                 Matrix::Zero(2, 1), RngBundle(1)));
  REQUIRE_NOTHROW(init_federated(FederatedKind::Ef21, clients,
                                 scaled_to_contractive(rand_k_compressor(1)), Matrix::Zero(2, 1),
                                 RngBundle(1)));
}

TEST_CASE("ef21 with identity compressors matches distributed gd from round one") {
  Problem p = global_quadratic(2, 2, 25);
  Matrix w0 = Matrix::Ones(2, 2);
  auto clients = split(p, 3, 26);
  FederatedState st =
      init_federated(FederatedKind::Ef21, clients, identity_compressor(), w0, RngBundle(27));
  FederatedState ref =
      init_federated(FederatedKind::FedGd, clients, identity_compressor(), w0, RngBundle(27));
  RngStream walk(28);
  Matrix w = w0;
  for (int t = 0; t < 25; ++t) {
    w += 0.3 * random_matrix(2, 2, walk);
    ef21_round(st, w);
    const Matrix& exact = fed_gd_round(ref, w);
    REQUIRE((st.g - exact).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("top-k with k = d behaves like identity in ef21") {
  Problem p = global_quadratic(2, 1, 29);
  auto clients = split(p, 2, 30);
  Matrix w0 = Matrix::Ones(2, 1);
  FederatedState st =
      init_federated(FederatedKind::Ef21, clients, top_k_compressor(2), w0, RngBundle(31));
  Matrix w = 2.0 * w0;
  ef21_round(st, w);
  for (int l = 0; l < st.client_count(); ++l) {
    Matrix exact = st.clients[l].gradient(w);
    REQUIRE((st.g_client[l] - exact).norm() <= 1e-14 * std::max(1.0, exact.norm()));
  }
}

TEST_CASE("ef21 per-client gap satisfies its contraction recursion deterministically") {
  // two clients, d = 2, top-1: beta = 1/2, sqrt(1 - beta) ~ 0.7071
  Problem p = global_quadratic(2, 1, 32);
  auto clients = split(p, 2, 33);
  Matrix w0 = Matrix::Ones(2, 1);
  FederatedState st =
      init_federated(FederatedKind::Ef21, clients, top_k_compressor(1), w0, RngBundle(34));
  const double beta = 0.5;
  const double root = std::sqrt(1.0 - beta);
  RngStream walk(35);
  Matrix w_old = w0;
  std::vector<double> gap_before(2);
  for (int t = 0; t < 60; ++t) {
    Matrix w_new = w_old + 0.05 * random_matrix(2, 1, walk);
    for (int l = 0; l < 2; ++l)
      gap_before[l] = (st.g_client[l] - st.clients[l].gradient(w_old)).squaredNorm();
    ef21_round(st, w_new);
    double dw = (w_new - w_old).squaredNorm();
    for (int l = 0; l < 2; ++l) {
      double gap_after = (st.g_client[l] - st.clients[l].gradient(w_new)).squaredNorm();
      double l_client = *st.clients[l].smoothness;
      double bound =
          root * gap_before[l] + (1.0 - beta) * l_client * l_client / (1.0 - root) * dw;
      REQUIRE(gap_after <= bound + 1e-12);
    }
    w_old = w_new;
  }
}

TEST_CASE("server state is the client average after every round") {
  Problem p = global_quadratic(2, 2, 36);
  Matrix w0 = Matrix::Zero(2, 2);
  FederatedState st = init_federated(FederatedKind::Ef21, split(p, 3, 37), top_k_compressor(2),
                                     w0, RngBundle(38));
  RngStream walk(39);
  Matrix w = w0;
  for (int t = 0; t < 20; ++t) {
    w += 0.2 * random_matrix(2, 2, walk);
    ef21_round(st, w);
    Matrix mean = st.g_client[0];
    for (int l = 1; l < 3; ++l) mean += st.g_client[l];
    mean /= 3.0;
    REQUIRE((st.g - mean).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("qgd estimator satisfies the expected-smoothness bound empirically") {
  // consistent planted system: every client interpolates, so Delta* = 0 and
  // E||G||^2 <= 2 (L omega / M)(f - f*) + ||grad f||^2
  Problem p = global_quadratic(2, 2, 40);
  auto clients = split(p, 2, 41, true);
  Matrix w0 = Matrix::Zero(2, 2);
  FederatedState st =
      init_federated(FederatedKind::Qgd, clients, rand_k_compressor(2), w0, RngBundle(42));
  double omega = rand_k_compressor(2).omega(4);
  double a1 = *p.smoothness * omega / 2.0;

  RngStream probe_rng(43);
  for (int probe = 0; probe < 3; ++probe) {
    Matrix w = random_matrix(2, 2, probe_rng);
    double second = 0.0;
    const int rounds = 4000;
    for (int t = 0; t < rounds; ++t) second += qgd_round(st, w).squaredNorm();
    second /= rounds;
    double rhs = 2.0 * a1 * (p.value(w) - *p.opt_value) + p.gradient(w).squaredNorm();
    REQUIRE(second <= rhs * 1.1);
  }
}

TEST_CASE("communication accounting is monotone and reproducible") {
  Problem p = global_quadratic(2, 2, 44);
  auto run_total = [&](std::uint64_t seed) {
    FederatedState st = init_federated(FederatedKind::Marina, split(p, 2, 45),
                                       rand_k_compressor(1), Matrix::Zero(2, 2),
                                       RngBundle(seed), 0.4);
    RngStream coin(seed + 1);
    RngStream walk(seed + 2);
    Matrix w_old = Matrix::Zero(2, 2);
    double prev = st.comm_scalars_total;
    for (int t = 0; t < 30; ++t) {
      Matrix w_new = w_old + 0.1 * random_matrix(2, 2, walk);
      marina_round(st, w_new, w_old, coin);
      REQUIRE(st.comm_scalars_total >= prev);
      prev = st.comm_scalars_total;
      w_old = w_new;
    }
    return st.comm_scalars_total;
  };
  REQUIRE(run_total(7) == run_total(7));
}
