#include <catch2/catch_amalgamated.hpp>

#include "sketchgrad/compression.hpp"
#include "testutil.hpp"

using namespace sketchgrad;
using sgtest::random_matrix;
using Catch::Approx;

TEST_CASE("rand-k on two coordinates enumerates both outcomes") {
  Compressor c = rand_k_compressor(1);
  Matrix x(1, 2);
  x << 2.0, 0.0;
  RngStream rng(7);
  bool saw_scaled = false, saw_zero = false;
  Matrix mean = Matrix::Zero(1, 2);
  double second = 0.0;
  const int trials = 4000;
  for (int t = 0; t < trials; ++t) {
    Matrix q = compress(c, x, rng);
    if (q(0, 0) == 4.0 && q(0, 1) == 0.0) saw_scaled = true;
    else if (q(0, 0) == 0.0 && q(0, 1) == 0.0) saw_zero = true;
    else FAIL("unexpected rand-k outcome");
    mean += q;
    second += (q - x).squaredNorm();
  }
  REQUIRE(saw_scaled);
  REQUIRE(saw_zero);
  mean /= trials;
  REQUIRE(mean(0, 0) == Approx(2.0).margin(0.15));
  // E||Q - X||^2 = (d/k - 1) ||X||^2 = 4 exactly for every subset draw
  REQUIRE(second / trials == Approx(4.0).margin(1e-12));
  REQUIRE(c.omega(2) == 1.0);
}

TEST_CASE("top-k keeps the largest magnitudes with index tie-breaking") {
  Compressor c = top_k_compressor(2);
  Matrix x(1, 3);
  x << 3.0, -1.0, 2.0;
  RngStream rng(1);
  Matrix q = compress(c, x, rng);
  REQUIRE(q(0, 0) == 3.0);
  REQUIRE(q(0, 1) == 0.0);
  REQUIRE(q(0, 2) == 2.0);
  double err = (q - x).squaredNorm();
  REQUIRE(err == Approx(1.0));
  REQUIRE(err <= (1.0 - c.beta(3)) * x.squaredNorm() + 1e-12);

  SECTION("ties broken by lowest flat index") {
    Matrix y(1, 4);
    y << 1.0, -1.0, 1.0, -1.0;
    Matrix qt = compress(top_k_compressor(2), y, rng);
    REQUIRE(qt(0, 0) == 1.0);
    REQUIRE(qt(0, 1) == -1.0);
    REQUIRE(qt(0, 2) == 0.0);
    REQUIRE(qt(0, 3) == 0.0);
  }

  SECTION("all-zero input returns zero") {
    Matrix z = Matrix::Zero(2, 2);
    REQUIRE(compress(top_k_compressor(1), z, rng).isZero(0.0));
  }
}

TEST_CASE("identity compressor returns its input") {
  RngStream rng(3);
  Matrix x = random_matrix(3, 4, rng);
  Compressor c = identity_compressor();
  REQUIRE((compress(c, x, rng) - x).norm() == 0.0);
  REQUIRE(c.omega(12) == 0.0);
  REQUIRE(c.beta(12) == 1.0);
}

TEST_CASE("k larger than d is rejected") {
  RngStream rng(5);
  Matrix x = Matrix::Zero(2, 2);
  REQUIRE_THROWS_AS(compress(rand_k_compressor(5), x, rng), ConfigError);
}

TEST_CASE("stochastic dither is unbiased on a grid") {
  Compressor c = dither_compressor(4);
  Matrix x(2, 2);
  x << 0.3, -1.7, 0.9, 2.0;
  RngStream rng(11);
  Matrix mean = Matrix::Zero(2, 2);
  const int trials = 200000;
  for (int t = 0; t < trials; ++t) mean += compress(c, x, rng);
  mean /= trials;
  REQUIRE((mean - x).cwiseAbs().maxCoeff() <= 0.01);
}

TEST_CASE("verify_compressor reports") {
  RngStream rng(13);

  SECTION("rand-k d=4 k=2 is exhaustively tight") {
    CompressorReport rep = verify_compressor(rand_k_compressor(2), 5, 2, 2, rng);
    REQUIRE(rep.exhaustive);
    REQUIRE(rep.max_bias <= 1e-12);
    REQUIRE(rep.max_moment_ratio == Approx(1.0).margin(1e-12));  // omega = d/k - 1 = 1
  }
  SECTION("top-k stays within the contraction bound on 1000 probes") {
    CompressorReport rep = verify_compressor(top_k_compressor(2), 1000, 2, 3, rng);
    REQUIRE(rep.max_moment_ratio <= 1.0 - 2.0 / 6.0 + 1e-12);
  }
  SECTION("identity has no bias and zero moment ratio") {
    CompressorReport rep = verify_compressor(identity_compressor(), 3, 2, 2, rng);
    REQUIRE(rep.max_bias == 0.0);
    REQUIRE(rep.max_moment_ratio == 0.0);
  }
  SECTION("dither respects its declared omega") {
    Compressor c = dither_compressor(2);
    CompressorReport rep = verify_compressor(c, 5, 2, 2, rng, 4000);
    REQUIRE(rep.max_moment_ratio <= c.omega(4) * 1.1 + 0.05);
  }
}

TEST_CASE("scaled unbiased compressor is contractive with beta = 1/(omega+1)") {
  Compressor scaled = scaled_to_contractive(rand_k_compressor(2));
  REQUIRE_FALSE(scaled.is_unbiased());
  REQUIRE(scaled.is_contractive());
  REQUIRE(scaled.beta(4) == Approx(0.5));  // omega = 1 at d = 4

  RngStream rng(17);
  double beta = scaled.beta(4);
  for (int t = 0; t < 1000; ++t) {
    Matrix x = random_matrix(2, 2, rng);
    Matrix q = compress(scaled, x, rng);
    REQUIRE((q - x).squaredNorm() <= x.squaredNorm() + 1e-12);
  }
  // empirical expectation over trials stays below (1 - beta) ||x||^2
  Matrix x(2, 2);
  x << 1.0, -2.0, 0.5, 3.0;
  double acc = 0.0;
  const int trials = 20000;
  for (int t = 0; t < trials; ++t) acc += (compress(scaled, x, rng) - x).squaredNorm();
  REQUIRE(acc / trials <= (1.0 - beta) * x.squaredNorm() * 1.02);
  REQUIRE_THROWS_AS(scaled_to_contractive(top_k_compressor(1)), ConfigError);
}

TEST_CASE("communication accounting conventions") {
  REQUIRE(comm_scalars(rand_k_compressor(5), 100) == 10.0);
  REQUIRE(comm_scalars(top_k_compressor(3), 100) == 6.0);
  REQUIRE(comm_scalars(identity_compressor(), 20) == 20.0);
  REQUIRE(comm_scalars(dither_compressor(1), 64) == Approx(1.0));  // 64 * log2(2) / 64
}
