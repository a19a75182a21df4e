#include <cmath>
#include <vector>

#include "doctest.h"
#include "driftlab/error.hpp"
#include "driftlab/kernels.hpp"
#include "driftlab/rng.hpp"

using namespace driftlab;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double zero_fraction = 0.3) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (double& x : m.values()) x = rng.uniform() < zero_fraction ? 0.0 : rng.normal();
  return m;
}

// Textbook triple loop.
Matrix reference_product(const Matrix& a, const Matrix& b, bool transpose_a, bool transpose_b) {
  const std::size_t n = transpose_a ? a.cols() : a.rows();
  const std::size_t inner = transpose_a ? a.rows() : a.cols();
  const std::size_t m = transpose_b ? b.rows() : b.cols();
  Matrix c(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      long double s = 0.0;
      for (std::size_t k = 0; k < inner; ++k) {
        const double x = transpose_a ? a(k, i) : a(i, k);
        const double y = transpose_b ? b(j, k) : b(k, j);
        s += static_cast<long double>(x) * y;
      }
      c(i, j) = static_cast<double>(s);
    }
  }
  return c;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

struct BackendGuard {
  kernels::Backend saved = kernels::backend();
  int threads = kernels::threads();
  ~BackendGuard() {
    kernels::set_backend(saved);
    kernels::set_threads(threads);
  }
};

}  // namespace

TEST_CASE("products match the triple-loop oracle") {
  const Matrix a = random_matrix(13, 9, 1);
  const Matrix b = random_matrix(9, 11, 2);
  const Matrix d = random_matrix(13, 11, 3);
  const Matrix w = random_matrix(7, 11, 4);

  Matrix c(13, 11);
  kernels::matmul(a, b, c);
  CHECK(max_abs_diff(c, reference_product(a, b, false, false)) < 1e-12);

  Matrix ct(9, 11);
  kernels::matmul_tn(a, d, ct);
  CHECK(max_abs_diff(ct, reference_product(a, d, true, false)) < 1e-12);

  Matrix cn(13, 7);
  kernels::matmul_nt(d, w, cn);
  CHECK(max_abs_diff(cn, reference_product(d, w, false, true)) < 1e-12);
}

TEST_CASE("accumulate adds to the existing output") {
  const Matrix a = random_matrix(5, 4, 5);
  const Matrix b = random_matrix(4, 3, 6);
  Matrix c(5, 3, 1.0);
  kernels::matmul(a, b, c, true);
  const Matrix ref = reference_product(a, b, false, false);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(c.data()[i] == doctest::Approx(ref.data()[i] + 1.0).epsilon(1e-12));
}

TEST_CASE("serial and parallel backends agree bit for bit") {
  BackendGuard guard;
  kernels::set_threads(4);
  const Matrix a = random_matrix(37, 50, 7, 0.6);
  const Matrix b = random_matrix(50, 29, 8);
  const Matrix d = random_matrix(37, 29, 9);
  const Matrix w = random_matrix(31, 29, 10);

  Matrix s1(37, 29), p1(37, 29), s2(50, 29), p2(50, 29), s3(37, 31), p3(37, 31);
  kernels::serial::matmul(a, b, s1);
  kernels::parallel::matmul(a, b, p1);
  kernels::serial::matmul_tn(a, d, s2);
  kernels::parallel::matmul_tn(a, d, p2);
  kernels::serial::matmul_nt(d, w, s3);
  kernels::parallel::matmul_nt(d, w, p3);
  CHECK(s1 == p1);
  CHECK(s2 == p2);
  CHECK(s3 == p3);
}

TEST_CASE("shape mismatches are configuration errors") {
  Matrix a(3, 4), b(5, 2), c(3, 2);
  CHECK_THROWS_AS(kernels::matmul(a, b, c), ConfigError);
  CHECK_THROWS_AS(kernels::matmul_tn(a, b, c), ConfigError);
  std::vector<double> x(3), y(4);
  CHECK_THROWS_AS(kernels::dot(x, y), ConfigError);
}

TEST_CASE("vector helpers") {
  const std::vector<double> x = {3.0, 4.0};
  std::vector<double> y = {1.0, 1.0};
  CHECK(kernels::norm2(x) == 5.0);
  CHECK(kernels::dot(x, y) == 7.0);
  kernels::axpy(2.0, x, y);
  CHECK(y == std::vector<double>{7.0, 9.0});

  Matrix m(2, 2, std::vector<double>{1, 2, 3, 4});
  std::vector<double> sums(2);
  kernels::column_sums(m, sums);
  CHECK(sums == std::vector<double>{4.0, 6.0});
  kernels::add_row_vector(m, std::vector<double>{10, 20});
  CHECK(m == Matrix(2, 2, std::vector<double>{11, 22, 13, 24}));
}
