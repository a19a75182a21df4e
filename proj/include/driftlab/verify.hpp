#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "driftlab/experiment.hpp"
#include "driftlab/mlp.hpp"

namespace driftlab {

/// Random model and batch for oracle checks: Gaussian inputs, uniform labels.
struct OracleProblem {
  MlpModel model;
  Batch batch;
};
OracleProblem random_problem(const std::vector<std::size_t>& sizes, std::size_t batch_size, std::uint64_t seed);

/// Central differences of the mean loss, one coordinate at a time.
ParamVector finite_difference_gradient(const MlpModel& model, const Batch& batch, double eps = 1e-6);

/// ‖a − b‖ / max(‖a‖, ‖b‖), 0 when both vanish.
double relative_error(const ParamVector& a, const ParamVector& b);

/// Backprop gradient vs. central differences.
double gradient_check(const OracleProblem& problem);

struct HvpCheck {
  double relative_error = 0.0;  // exact HVP vs. central difference of gradients
  double symmetry = 0.0;        // |uᵀH v − vᵀH u| / max(|uᵀH v|, |vᵀH u|)
};
HvpCheck hvp_check(const OracleProblem& problem, std::uint64_t seed);

struct SpectralCheck {
  double max_relative_error = 0.0;  // top-k power iteration vs. dense eigenvalues
  double max_overlap = 0.0;         // max |vᵢᵀvⱼ|, i ≠ j
  bool all_converged = false;
};
/// Trains the problem's model towards a minimum with full-batch gradient
/// descent first, so the leading eigenvalues are positive.
SpectralCheck spectral_check(OracleProblem problem, std::size_t k, std::uint64_t seed);

/// One-dimensional quadratic tasks L_i(w) = ½λ_i(w − w_i*)², where the
/// second-order expansion is exact.
struct QuadraticSandboxCheck {
  double max_f1_error = 0.0;           // |F₁ − ½λΔw²| / ½λΔw² over a grid of λ and Δw
  bool f1_within_bound = true;         // F₁ ≤ forgetting_bound on every grid point
  std::size_t trajectories = 0;        // gradient-descent runs on L₂ per criterion
  std::size_t gradnorm_violations = 0;  // ‖Δw‖ below C − ε/λ₂
  std::size_t loss_violations = 0;      // ‖Δw‖ below C − 2√ε/λ₂, among runs with λ₂ ≤ 2
  std::size_t loss_violations_steep = 0;  // the same among runs with λ₂ > 2
};
QuadraticSandboxCheck quadratic_sandbox_check();

/// Gradient, HVP and dense-Hessian comparisons over a grid of layer shapes
/// and seeds, with pass/fail tolerances of 1e-5 (gradients), 1e-4 and 1e-8
/// (HVPs) and 1e-3 / 1e-6 (spectra).
std::vector<Check> run_oracle_suite(std::size_t seeds = 20);

}  // namespace driftlab
