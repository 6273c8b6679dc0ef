#include <catch2/catch_amalgamated.hpp>

#include "hsicbt/kernels.hpp"
#include "hsicbt/matrix.hpp"
#include "support/oracles.hpp"

using hsicbt::Matrix;

TEST_CASE("matmul basics") {
  Matrix a(2, 2);
  a(0, 0) = 1; a(0, 1) = 2; a(1, 0) = 3; a(1, 1) = 4;

  SECTION("identity is neutral") {
    const Matrix r = hsicbt::matmul(Matrix::identity(2), a);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) CHECK(r(i, j) == a(i, j));
  }

  SECTION("hand-checked product") {
    Matrix ones(2, 1);
    ones(0, 0) = 1; ones(1, 0) = 1;
    const Matrix r = hsicbt::matmul(a, ones);
    CHECK(r(0, 0) == 3.0);
    CHECK(r(1, 0) == 7.0);
  }

  SECTION("inner dimension mismatch throws") {
    CHECK_THROWS_AS(hsicbt::matmul(Matrix(2, 3), Matrix(4, 2)), hsicbt::dimension_error);
  }

  SECTION("matches naive product on random inputs") {
    const Matrix x = oracle::random_matrix(7, 5, 11);
    const Matrix y = oracle::random_matrix(5, 9, 12);
    const Matrix fast = hsicbt::matmul(x, y);
    const Matrix slow = oracle::matmul_naive(x, y);
    for (std::size_t i = 0; i < fast.size(); ++i)
      CHECK(fast.values()[i] == Catch::Approx(slow.values()[i]).margin(1e-12));
  }

  SECTION("associativity within 1e-10 relative") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const Matrix x = oracle::random_matrix(6, 4, seed);
      const Matrix y = oracle::random_matrix(4, 5, seed + 100);
      const Matrix z = oracle::random_matrix(5, 3, seed + 200);
      const Matrix left = hsicbt::matmul(hsicbt::matmul(x, y), z);
      const Matrix right = hsicbt::matmul(x, hsicbt::matmul(y, z));
      const double scale_ref = std::max(1.0, hsicbt::max_abs(left));
      for (std::size_t i = 0; i < left.size(); ++i)
        CHECK(std::abs(left.values()[i] - right.values()[i]) / scale_ref < 1e-10);
    }
  }
}

TEST_CASE("solve_spd") {
  SECTION("zero matrix with unit ridge reduces to identity solve") {
    const Matrix x = hsicbt::solve_spd(Matrix(3, 3), Matrix::identity(3), 1.0);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        CHECK(x(i, j) == Catch::Approx(i == j ? 1.0 : 0.0).margin(1e-14));
  }

  SECTION("identity plus unit ridge halves the rhs") {
    Matrix b(2, 1);
    b(0, 0) = 2; b(1, 0) = 4;
    const Matrix x = hsicbt::solve_spd(Matrix::identity(2), b, 1.0);
    CHECK(x(0, 0) == Catch::Approx(1.0).margin(1e-14));
    CHECK(x(1, 0) == Catch::Approx(2.0).margin(1e-14));
  }

  SECTION("non-square matrix throws") {
    CHECK_THROWS_AS(hsicbt::solve_spd(Matrix(2, 3), Matrix(2, 1), 1.0),
                    hsicbt::dimension_error);
  }

  SECTION("indefinite system reports the failing pivot") {
    Matrix a(2, 2);
    a(0, 0) = -5.0;
    try {
      hsicbt::solve_spd(a, Matrix::identity(2), 1.0);
      FAIL("expected numerical_error");
    } catch (const hsicbt::numerical_error& e) {
      CHECK(e.pivot == 0);
    }
  }

  SECTION("residual bound on random SPD systems up to 64x64") {
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
      const std::size_t n = 4 + (seed * 9) % 61;
      const Matrix a = oracle::random_spd(n, seed);
      const Matrix b = oracle::random_matrix(n, 3, seed + 500);
      const double ridge = 0.5;
      const Matrix x = hsicbt::solve_spd(a, b, ridge);
      Matrix reconstructed = hsicbt::matmul(a, x);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < 3; ++j) reconstructed(i, j) += ridge * x(i, j);
      const double resid = hsicbt::max_abs(hsicbt::sub(reconstructed, b));
      CHECK(resid <= 1e-8 * (1.0 + hsicbt::max_abs(b)));
    }
  }
}

TEST_CASE("eigvals_sym") {
  SECTION("diagonal matrix, descending order") {
    Matrix a(2, 2);
    a(0, 0) = 3; a(1, 1) = 1;
    const auto vals = hsicbt::eigvals_sym(a);
    CHECK(vals[0] == Catch::Approx(3.0).margin(1e-12));
    CHECK(vals[1] == Catch::Approx(1.0).margin(1e-12));
  }

  SECTION("centering matrix m=2 has eigenvalues 1 and 0") {
    const auto vals = hsicbt::eigvals_sym(hsicbt::centering_matrix(2));
    CHECK(vals[0] == Catch::Approx(1.0).margin(1e-12));
    CHECK(vals[1] == Catch::Approx(0.0).margin(1e-12));
  }

  SECTION("symmetric off-diagonal pair") {
    Matrix a(2, 2);
    a(0, 1) = 1; a(1, 0) = 1;
    const auto vals = hsicbt::eigvals_sym(a);
    CHECK(vals[0] == Catch::Approx(1.0).margin(1e-12));
    CHECK(vals[1] == Catch::Approx(-1.0).margin(1e-12));
  }

  SECTION("asymmetry beyond tolerance throws") {
    Matrix a(2, 2);
    a(0, 1) = 1e-6;
    CHECK_THROWS_AS(hsicbt::eigvals_sym(a), hsicbt::data_error);
  }

  SECTION("eigenvalue sum equals trace") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const Matrix a = oracle::random_spd(12, seed);
      const auto vals = hsicbt::eigvals_sym(a);
      double sum = 0.0;
      for (double v : vals) sum += v;
      const double tr = hsicbt::trace(a);
      CHECK(std::abs(sum - tr) <= 1e-8 * (1.0 + std::abs(tr)));
    }
  }

  SECTION("centering matrix spectrum for several m") {
    for (std::size_t m : {2u, 3u, 8u, 17u, 64u}) {
      const auto vals = hsicbt::eigvals_sym(hsicbt::centering_matrix(m));
      for (std::size_t i = 0; i + 1 < m; ++i) CHECK(std::abs(vals[i] - 1.0) < 1e-10);
      CHECK(std::abs(vals[m - 1]) < 1e-10);
    }
  }
}
