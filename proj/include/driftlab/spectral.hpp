#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "driftlab/matrix.hpp"
#include "driftlab/mlp.hpp"
#include "driftlab/tasks.hpp"

namespace driftlab {

/// v ↦ Hv for some symmetric H.
using LinearOperator = std::function<ParamVector(const ParamVector&)>;

struct PowerIterationOptions {
  std::size_t k = 20;
  double tol = 1e-3;          // relative change of the Rayleigh quotient
  std::size_t max_iters = 200;  // per eigenvalue
  std::uint64_t seed = 0;
  bool keep_vectors = false;
};

struct SpectrumReport {
  std::string checkpoint_id;
  std::size_t task_id = 0;
  std::size_t probe_sample_size = 0;
  std::vector<double> eigenvalues;  // descending
  std::vector<std::size_t> iterations;
  std::vector<double> residuals;    // ‖Hv − λv‖
  std::vector<bool> converged;
  std::vector<ParamVector> eigenvectors;  // only with keep_vectors

  /// max(λ₁, 0); 0 for an empty report.
  double lambda_max() const;
};

/// Power iteration with Hotelling deflation. Eigenpair j iterates
/// v ← Hv − Σ_{i<j} λᵢ(vᵢᵀv)vᵢ, re-orthogonalised against the earlier
/// vectors, until |Δλ| ≤ tol·max(1,|λ|) and the residual outside the earlier
/// vectors is at most 10·tol·max(1,|λ|). A Rayleigh-Ritz pass over the k
/// vectors then removes the error that deflation carries from one pair to
/// the next. A pair is converged when its iteration stopped on the
/// tolerance and ‖Hv − λv‖ ≤ 10·tol·max(1,|λ|). Start vectors come from
/// Rng(mix_seed(seed, j)).
SpectrumReport top_k_eigen(const LinearOperator& h, std::size_t dim, const PowerIterationOptions& options);

/// Evaluation-mode Hessian of the mean loss over `probe`, applied in chunks.
LinearOperator loss_hessian_operator(const MlpModel& model, const Batch& probe, std::size_t chunk = 512);

/// Seeded subsample (without replacement) of a task's training split.
Batch probe_subsample(const Task& task, std::size_t size, std::uint64_t seed);

/// top_k_eigen on the loss Hessian of `model` over `probe`.
SpectrumReport loss_spectrum(const MlpModel& model, const Batch& probe, const PowerIterationOptions& options);

/// Central difference (∇L(w+εv) − ∇L(w−εv))/(2ε), ε = 1e-4·(1+‖w‖)/‖v‖.
ParamVector hvp_central_difference(const MlpModel& model, const Batch& batch, const ParamVector& v);

inline constexpr std::size_t kDenseHessianMaxParams = 200;

struct DenseHessian {
  Matrix h;                  // symmetrised
  double asymmetry = 0.0;    // max|H − Hᵀ| / max|H| before symmetrisation
};

/// Column i is (∇L(w+εeᵢ) − ∇L(w−εeᵢ))/(2ε), ε = 1e-7·(1+‖w‖). Refuses
/// models above kDenseHessianMaxParams parameters (DomainError).
DenseHessian dense_hessian_oracle(const MlpModel& model, const Batch& batch);
/// Same construction for an arbitrary gradient function.
DenseHessian dense_hessian_oracle(const std::function<ParamVector(const ParamVector&)>& grad, const ParamVector& w);

struct SymmetricEigen {
  std::vector<double> values;  // descending
  Matrix vectors;              // column j pairs with values[j]
};

/// Cyclic Jacobi rotations; `a` must be square and symmetric.
SymmetricEigen jacobi_eigen(const Matrix& a, double tol = 1e-14, std::size_t max_sweeps = 100);

struct DisplacementRecord {
  std::string from_checkpoint;
  std::string to_checkpoint;
  double delta_norm = 0.0;
  std::vector<double> layer_norms;  // weights and biases of each dense layer together
};

/// ‖w_b − w_a‖ and its per-layer split. Length mismatch → ConfigError. The
/// per-layer split needs `model` for the layout; without it layer_norms is empty.
DisplacementRecord displacement(const ParamVector& w_a, const ParamVector& w_b, const MlpModel* model = nullptr);

double param_norm(const ParamVector& w);

}  // namespace driftlab
