#include "driftlab/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

#include "driftlab/error.hpp"

namespace driftlab {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (data_.size() != rows * cols) {
    throw ConfigError("matrix data length " + std::to_string(data_.size()) + " != " +
                      std::to_string(rows) + "x" + std::to_string(cols));
  }
}

void Matrix::assign_zero(std::size_t rows, std::size_t cols) {
  rows_ = rows;
  cols_ = cols;
  data_.assign(rows * cols, 0.0);
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

namespace kernels {

namespace {

std::atomic<Backend> g_backend{Backend::parallel};
std::atomic<int> g_threads{0};

int active_threads() {
  const int t = g_threads.load();
  return t > 0 ? t : omp_get_max_threads();
}

void shape_error(const char* op, ConstMatrixView x, ConstMatrixView y, ConstMatrixView out) {
  throw ConfigError(std::string(op) + ": incompatible shapes " + std::to_string(x.rows) + "x" +
                    std::to_string(x.cols) + ", " + std::to_string(y.rows) + "x" +
                    std::to_string(y.cols) + " -> " + std::to_string(out.rows) + "x" +
                    std::to_string(out.cols));
}

void check_matmul(ConstMatrixView a, ConstMatrixView b, ConstMatrixView c) {
  if (a.cols != b.rows || c.rows != a.rows || c.cols != b.cols) shape_error("matmul", a, b, c);
}
void check_matmul_tn(ConstMatrixView a, ConstMatrixView d, ConstMatrixView c) {
  if (a.rows != d.rows || c.rows != a.cols || c.cols != d.cols) shape_error("matmul_tn", a, d, c);
}
void check_matmul_nt(ConstMatrixView d, ConstMatrixView w, ConstMatrixView c) {
  if (d.cols != w.cols || c.rows != d.rows || c.cols != w.rows) shape_error("matmul_nt", d, w, c);
}

// Row blocks keep the streamed operand hot in cache. Blocking changes only
// which rows are processed together, never the order of accumulation into
// any single output element.
constexpr std::size_t kRowBlock = 4;

inline void axpy_row(double alpha, const double* __restrict x, double* __restrict y, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) y[j] += alpha * x[j];
}

// c[r0..r1) = a[r0..r1) * b; zero entries of a are skipped (inputs are
// mostly-zero images).
void matmul_rows(ConstMatrixView a, ConstMatrixView b, MatrixView c, bool accumulate,
                 std::size_t r0, std::size_t r1) {
  if (!accumulate) {
    for (std::size_t r = r0; r < r1; ++r) std::fill_n(c.row(r), c.cols, 0.0);
  }
  for (std::size_t k = 0; k < a.cols; ++k) {
    const double* brow = b.row(k);
    for (std::size_t r = r0; r < r1; ++r) {
      const double aik = a(r, k);
      if (aik == 0.0) continue;
      axpy_row(aik, brow, c.row(r), c.cols);
    }
  }
}

// c[k0..k1) = (aᵀ d)[k0..k1)
void matmul_tn_rows(ConstMatrixView a, ConstMatrixView d, MatrixView c, bool accumulate,
                    std::size_t k0, std::size_t k1) {
  if (!accumulate) {
    for (std::size_t k = k0; k < k1; ++k) std::fill_n(c.row(k), c.cols, 0.0);
  }
  for (std::size_t m = 0; m < a.rows; ++m) {
    const double* drow = d.row(m);
    const double* arow = a.row(m);
    for (std::size_t k = k0; k < k1; ++k) {
      const double amk = arow[k];
      if (amk == 0.0) continue;
      axpy_row(amk, drow, c.row(k), c.cols);
    }
  }
}

inline double dot_raw(const double* __restrict x, const double* __restrict y, std::size_t n) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t j = 0; j < 8; ++j) acc[j] += x[i + j] * y[i + j];
  }
  for (std::size_t j = 0; i + j < n; ++j) acc[j] += x[i + j] * y[i + j];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

void matmul_nt_rows(ConstMatrixView d, ConstMatrixView w, MatrixView c, bool accumulate,
                    std::size_t r0, std::size_t r1) {
  for (std::size_t r = r0; r < r1; ++r) {
    const double* drow = d.row(r);
    double* crow = c.row(r);
    for (std::size_t k = 0; k < w.rows; ++k) {
      const double v = dot_raw(drow, w.row(k), d.cols);
      crow[k] = accumulate ? crow[k] + v : v;
    }
  }
}

template <typename RowFn>
void run_serial(std::size_t rows, RowFn&& fn) {
  for (std::size_t r0 = 0; r0 < rows; r0 += kRowBlock) fn(r0, std::min(rows, r0 + kRowBlock));
}

template <typename RowFn>
void run_parallel(std::size_t rows, RowFn&& fn) {
  const auto blocks = static_cast<std::ptrdiff_t>((rows + kRowBlock - 1) / kRowBlock);
  const int nthreads = active_threads();
  if (nthreads <= 1 || blocks <= 1) {
    run_serial(rows, fn);
    return;
  }
#pragma omp parallel for schedule(static) num_threads(nthreads)
  for (std::ptrdiff_t b = 0; b < blocks; ++b) {
    const std::size_t r0 = static_cast<std::size_t>(b) * kRowBlock;
    fn(r0, std::min(rows, r0 + kRowBlock));
  }
}

}  // namespace

void set_backend(Backend backend) { g_backend.store(backend); }
Backend backend() { return g_backend.load(); }
void set_threads(int threads) { g_threads.store(threads); }
int threads() { return active_threads(); }

namespace serial {

void matmul(ConstMatrixView a, ConstMatrixView b, MatrixView c, bool accumulate) {
  check_matmul(a, b, c);
  run_serial(a.rows, [&](std::size_t r0, std::size_t r1) { matmul_rows(a, b, c, accumulate, r0, r1); });
}

void matmul_tn(ConstMatrixView a, ConstMatrixView d, MatrixView c, bool accumulate) {
  check_matmul_tn(a, d, c);
  run_serial(a.cols, [&](std::size_t k0, std::size_t k1) { matmul_tn_rows(a, d, c, accumulate, k0, k1); });
}

void matmul_nt(ConstMatrixView d, ConstMatrixView w, MatrixView c, bool accumulate) {
  check_matmul_nt(d, w, c);
  run_serial(d.rows, [&](std::size_t r0, std::size_t r1) { matmul_nt_rows(d, w, c, accumulate, r0, r1); });
}

}  // namespace serial

namespace parallel {

void matmul(ConstMatrixView a, ConstMatrixView b, MatrixView c, bool accumulate) {
  check_matmul(a, b, c);
  run_parallel(a.rows, [&](std::size_t r0, std::size_t r1) { matmul_rows(a, b, c, accumulate, r0, r1); });
}

void matmul_tn(ConstMatrixView a, ConstMatrixView d, MatrixView c, bool accumulate) {
  check_matmul_tn(a, d, c);
  run_parallel(a.cols, [&](std::size_t k0, std::size_t k1) { matmul_tn_rows(a, d, c, accumulate, k0, k1); });
}

void matmul_nt(ConstMatrixView d, ConstMatrixView w, MatrixView c, bool accumulate) {
  check_matmul_nt(d, w, c);
  run_parallel(d.rows, [&](std::size_t r0, std::size_t r1) { matmul_nt_rows(d, w, c, accumulate, r0, r1); });
}

}  // namespace parallel

void matmul(ConstMatrixView a, ConstMatrixView b, MatrixView c, bool accumulate) {
  backend() == Backend::serial ? serial::matmul(a, b, c, accumulate) : parallel::matmul(a, b, c, accumulate);
}

void matmul_tn(ConstMatrixView a, ConstMatrixView d, MatrixView c, bool accumulate) {
  backend() == Backend::serial ? serial::matmul_tn(a, d, c, accumulate)
                               : parallel::matmul_tn(a, d, c, accumulate);
}

void matmul_nt(ConstMatrixView d, ConstMatrixView w, MatrixView c, bool accumulate) {
  backend() == Backend::serial ? serial::matmul_nt(d, w, c, accumulate)
                               : parallel::matmul_nt(d, w, c, accumulate);
}

void add_row_vector(MatrixView c, std::span<const double> v) {
  if (v.size() != c.cols) throw ConfigError("add_row_vector: length mismatch");
  for (std::size_t r = 0; r < c.rows; ++r) axpy_row(1.0, v.data(), c.row(r), c.cols);
}

void column_sums(ConstMatrixView d, std::span<double> out, bool accumulate) {
  if (out.size() != d.cols) throw ConfigError("column_sums: length mismatch");
  if (!accumulate) std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t r = 0; r < d.rows; ++r) axpy_row(1.0, d.row(r), out.data(), d.cols);
}

double dot(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ConfigError("dot: length mismatch");
  return dot_raw(x.data(), y.data(), x.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw ConfigError("axpy: length mismatch");
  axpy_row(alpha, x.data(), y.data(), x.size());
}

double norm2(std::span<const double> x) { return std::sqrt(dot_raw(x.data(), x.data(), x.size())); }

}  // namespace kernels
}  // namespace driftlab
