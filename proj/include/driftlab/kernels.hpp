#pragma once

// Dense kernels behind the MLP. Two implementations share every inner
// row routine: `serial` is the reference, `parallel` splits output rows
// across OpenMP threads. Each output element is produced by the same
// sequence of floating-point operations in both, so results are
// bit-identical for any thread count.

#include <span>

#include "driftlab/matrix.hpp"

namespace driftlab::kernels {

enum class Backend { serial, parallel };

void set_backend(Backend backend);
Backend backend();

/// Threads used by the parallel backend (defaults to omp_get_max_threads()).
void set_threads(int threads);
int threads();

namespace serial {
/// c (+)= a * b
void matmul(ConstMatrixView a, ConstMatrixView b, MatrixView c, bool accumulate = false);
/// c (+)= aᵀ * d
void matmul_tn(ConstMatrixView a, ConstMatrixView d, MatrixView c, bool accumulate = false);
/// c (+)= d * wᵀ
void matmul_nt(ConstMatrixView d, ConstMatrixView w, MatrixView c, bool accumulate = false);
}  // namespace serial

namespace parallel {
void matmul(ConstMatrixView a, ConstMatrixView b, MatrixView c, bool accumulate = false);
void matmul_tn(ConstMatrixView a, ConstMatrixView d, MatrixView c, bool accumulate = false);
void matmul_nt(ConstMatrixView d, ConstMatrixView w, MatrixView c, bool accumulate = false);
}  // namespace parallel

// Dispatch on the active backend.
void matmul(ConstMatrixView a, ConstMatrixView b, MatrixView c, bool accumulate = false);
void matmul_tn(ConstMatrixView a, ConstMatrixView d, MatrixView c, bool accumulate = false);
void matmul_nt(ConstMatrixView d, ConstMatrixView w, MatrixView c, bool accumulate = false);

void add_row_vector(MatrixView c, std::span<const double> v);
/// out (+)= Σ_rows d
void column_sums(ConstMatrixView d, std::span<double> out, bool accumulate = false);

/// Fixed-order dot product (eight interleaved partial sums).
double dot(std::span<const double> x, std::span<const double> y);
/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
double norm2(std::span<const double> x);

}  // namespace driftlab::kernels
