// Serial reference kernels against the OpenMP ones, at the shapes of one
// 256-256 MLP step (batch 10 and an evaluation chunk of 1000).

#include <benchmark/benchmark.h>

#include "driftlab/kernels.hpp"
#include "driftlab/matrix.hpp"
#include "driftlab/mlp.hpp"
#include "driftlab/rng.hpp"

namespace {

using namespace driftlab;

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (double& x : m.values()) x = rng.normal();
  return m;
}

template <void (*Kernel)(ConstMatrixView, ConstMatrixView, MatrixView, bool)>
void bm_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto m = static_cast<std::size_t>(state.range(2));
  const Matrix a = random_matrix(n, k, 1);
  const Matrix b = random_matrix(k, m, 2);
  Matrix c(n, m);
  for (auto _ : state) {
    Kernel(a, b, c, false);
    benchmark::DoNotOptimize(c.values().data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * k * m));
}

template <void (*Kernel)(ConstMatrixView, ConstMatrixView, MatrixView, bool)>
void bm_matmul_tn(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto m = static_cast<std::size_t>(state.range(2));
  const Matrix a = random_matrix(n, k, 3);
  const Matrix d = random_matrix(n, m, 4);
  Matrix c(k, m);
  for (auto _ : state) {
    Kernel(a, d, c, false);
    benchmark::DoNotOptimize(c.values().data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * k * m));
}

void shapes(benchmark::internal::Benchmark* b) {
  b->Args({10, 784, 256})->Args({10, 256, 256})->Args({1000, 784, 256})->Args({1000, 256, 256});
}

BENCHMARK(bm_matmul<kernels::serial::matmul>)->Name("matmul/serial")->Apply(shapes);
BENCHMARK(bm_matmul<kernels::parallel::matmul>)->Name("matmul/parallel")->Apply(shapes);
BENCHMARK(bm_matmul_tn<kernels::serial::matmul_tn>)->Name("matmul_tn/serial")->Apply(shapes);
BENCHMARK(bm_matmul_tn<kernels::parallel::matmul_tn>)->Name("matmul_tn/parallel")->Apply(shapes);

void bm_train_step(benchmark::State& state) {
  kernels::set_backend(state.range(0) == 0 ? kernels::Backend::serial : kernels::Backend::parallel);
  const auto batch_size = static_cast<std::size_t>(state.range(1));
  const MlpModel model = MlpModel::initialized({784, 256, 256, 10}, 5);
  Batch batch;
  batch.inputs = random_matrix(batch_size, 784, 6);
  batch.labels.resize(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) batch.labels[i] = static_cast<int>(i % 10);
  std::vector<double> grad(model.parameter_count());
  for (auto _ : state) {
    benchmark::DoNotOptimize(loss_and_grad(model, batch, Mode::eval, nullptr, grad));
  }
  kernels::set_backend(kernels::Backend::parallel);
}
BENCHMARK(bm_train_step)->ArgNames({"parallel", "batch"})->ArgsProduct({{0, 1}, {10, 256}});

}  // namespace

BENCHMARK_MAIN();
