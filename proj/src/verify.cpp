#include "driftlab/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>

#include "driftlab/metrics.hpp"
#include "driftlab/rng.hpp"
#include "driftlab/spectral.hpp"

namespace driftlab {

namespace {

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3e", v);
  return buf;
}

std::string shape(const std::vector<std::size_t>& sizes) {
  std::string s;
  for (std::size_t i = 0; i < sizes.size(); ++i) s += (i ? "-" : "") + std::to_string(sizes[i]);
  return s;
}

}  // namespace

OracleProblem random_problem(const std::vector<std::size_t>& sizes, std::size_t batch_size, std::uint64_t seed) {
  OracleProblem p{MlpModel::initialized(sizes, mix_seed(seed, "init")), {}};
  Rng rng(mix_seed(seed, "synthetic"));
  p.batch.inputs = Matrix(batch_size, sizes.front());
  for (double& x : p.batch.inputs.values()) x = rng.normal();
  p.batch.labels.resize(batch_size);
  for (int& y : p.batch.labels) y = static_cast<int>(rng.uniform_int(sizes.back()));
  return p;
}

ParamVector finite_difference_gradient(const MlpModel& model, const Batch& batch, double eps) {
  MlpModel probe = model;
  ParamVector w = model.pack();
  ParamVector out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double orig = w[i];
    w[i] = orig + eps;
    probe.unpack(w);
    const double lp = loss(probe, batch);
    w[i] = orig - eps;
    probe.unpack(w);
    const double lm = loss(probe, batch);
    w[i] = orig;
    out[i] = (lp - lm) / (2.0 * eps);
  }
  return out;
}

double relative_error(const ParamVector& a, const ParamVector& b) {
  const double scale = std::max(norm(a), norm(b));
  return scale == 0.0 ? 0.0 : norm(difference(a, b)) / scale;
}

double gradient_check(const OracleProblem& problem) {
  const ParamVector exact = loss_and_grad(problem.model, problem.batch).grad;
  return relative_error(exact, finite_difference_gradient(problem.model, problem.batch));
}

HvpCheck hvp_check(const OracleProblem& problem, std::uint64_t seed) {
  Rng rng(mix_seed(seed, "hvp"));
  const std::size_t d = problem.model.parameter_count();
  ParamVector u(d), v(d);
  for (double& x : u) x = rng.normal();
  for (double& x : v) x = rng.normal();
  HvpCheck out;
  const ParamVector hv = hvp(problem.model, problem.batch, v);
  out.relative_error = relative_error(hv, hvp_central_difference(problem.model, problem.batch, v));
  const ParamVector hu = hvp(problem.model, problem.batch, u);
  const double a = dot(u, hv);
  const double b = dot(v, hu);
  const double scale = std::max(std::abs(a), std::abs(b));
  out.symmetry = scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
  return out;
}

SpectralCheck spectral_check(OracleProblem problem, std::size_t k, std::uint64_t seed) {
  // Full-batch descent tends to park some pre-activations on the ReLU kink,
  // where the Hessian is undefined and finite differences pick up the jump in
  // the gradient. Keep the last iterate whose pre-activations stay clear of it.
  const auto kink_distance = [&](const MlpModel& m) {
    const ForwardResult f = forward(m, problem.batch.inputs, Mode::eval);
    double closest = std::numeric_limits<double>::infinity();
    for (const Matrix& z : f.cache.pre) {
      for (double x : z.values()) closest = std::min(closest, std::abs(x));
    }
    return closest;
  };
  std::vector<double> grad(problem.model.parameter_count());
  MlpModel checkpoint = problem.model;
  for (int step = 0; step < 2000; ++step) {
    loss_and_grad(problem.model, problem.batch, Mode::eval, nullptr, grad);
    for (std::size_t i = 0; i < grad.size(); ++i) problem.model.parameters()[i] -= 0.2 * grad[i];
    if (kink_distance(problem.model) >= 1e-4) checkpoint = problem.model;
  }
  problem.model = checkpoint;
  const SymmetricEigen dense = jacobi_eigen(dense_hessian_oracle(problem.model, problem.batch).h);
  // Power iteration finds the eigenvalues of largest magnitude.
  std::vector<double> reference = dense.values;
  std::sort(reference.begin(), reference.end(), [](double x, double y) { return std::abs(x) > std::abs(y); });
  reference.resize(k);
  std::sort(reference.begin(), reference.end(), std::greater<>());

  PowerIterationOptions options;
  options.k = k;
  options.tol = 1e-12;
  options.max_iters = 20000;
  options.seed = seed;
  options.keep_vectors = true;
  const SpectrumReport report = loss_spectrum(problem.model, problem.batch, options);

  SpectralCheck out;
  out.all_converged = std::all_of(report.converged.begin(), report.converged.end(), [](bool c) { return c; });
  for (std::size_t j = 0; j < k; ++j) {
    const double denom = std::max(std::abs(reference[j]), 1e-12);
    out.max_relative_error = std::max(out.max_relative_error, std::abs(report.eigenvalues[j] - reference[j]) / denom);
    for (std::size_t i = 0; i < j; ++i) {
      out.max_overlap = std::max(out.max_overlap, std::abs(dot(report.eigenvectors[i], report.eigenvectors[j])));
    }
  }
  return out;
}

QuadraticSandboxCheck quadratic_sandbox_check() {
  QuadraticSandboxCheck out;
  const double lambdas[] = {0.05, 0.5, 1.0, 2.0, 2.19, 7.73, 40.0};
  for (double lambda : lambdas) {
    for (double w1 : {-1.5, 0.0, 3.25}) {
      for (double delta : {-4.0, -0.1, 1e-3, 0.5, 73.1}) {
        const auto l1 = [&](double w) { return 0.5 * lambda * (w - w1) * (w - w1); };
        const double f1 = forgetting_f1(l1(w1 + delta), l1(w1));
        const double bound = forgetting_bound(lambda, std::abs(delta));
        out.max_f1_error = std::max(out.max_f1_error, std::abs(f1 - bound) / bound);
        out.f1_within_bound = out.f1_within_bound && f1 <= bound * (1.0 + 1e-12);
      }
    }
  }

  // Gradient descent on L₂ from ŵ₁ = 0 has the closed form
  // w_k − w₂* = (1 − ηλ₂)^k (ŵ₁ − w₂*); it stops at the first k meeting the
  // convergence criterion.
  for (double lambda : lambdas) {
    for (double c : {0.5, 2.0, 10.0}) {
      for (double step : {0.05, 0.3, 0.9, 1.7}) {  // ηλ₂
        for (double eps : {1e-4, 1e-2, 0.3}) {
          for (const auto criterion : {ConvergenceCriterion::loss, ConvergenceCriterion::gradnorm}) {
            const double w_star = c;
            double w = 0.0;
            for (int k = 0; k < 100000; ++k) {
              const double d = w - w_star;
              const bool done = criterion == ConvergenceCriterion::loss ? 0.5 * lambda * d * d <= eps
                                                                         : std::abs(lambda * d) <= eps;
              if (done) break;
              w = w_star + std::pow(1.0 - step, k + 1) * (0.0 - w_star);
            }
            const double delta_w = std::abs(w);
            const double lower = delta_w_lower_bound(c, eps, lambda, criterion);
            const bool violated = delta_w < lower - 1e-12;
            if (criterion == ConvergenceCriterion::gradnorm) {
              ++out.trajectories;
              out.gradnorm_violations += violated;
            } else if (lambda <= 2.0) {
              out.loss_violations += violated;
            } else {
              out.loss_violations_steep += violated;
            }
          }
        }
      }
    }
  }
  return out;
}

std::vector<Check> run_oracle_suite(std::size_t seeds) {
  std::vector<Check> checks;
  const std::vector<std::vector<std::size_t>> grid = {{3, 2}, {5, 4, 3}, {6, 8, 4}, {4, 5, 5, 3}, {10, 7, 6, 4}};

  double worst_grad = 0.0;
  std::string worst_grad_at;
  double worst_hvp = 0.0;
  double worst_sym = 0.0;
  for (const auto& sizes : grid) {
    for (std::uint64_t s = 0; s < seeds; ++s) {
      const OracleProblem p = random_problem(sizes, 6, s);
      const double g = gradient_check(p);
      if (g > worst_grad) {
        worst_grad = g;
        worst_grad_at = shape(sizes) + " seed " + std::to_string(s);
      }
      const HvpCheck h = hvp_check(p, s);
      worst_hvp = std::max(worst_hvp, h.relative_error);
      worst_sym = std::max(worst_sym, h.symmetry);
    }
  }
  checks.push_back({"gradient vs. finite differences <= 1e-5", worst_grad <= 1e-5,
                    "max relative error " + sci(worst_grad) + (worst_grad_at.empty() ? "" : " at " + worst_grad_at)});
  checks.push_back({"HVP vs. finite differences <= 1e-4", worst_hvp <= 1e-4, "max relative error " + sci(worst_hvp)});
  checks.push_back({"HVP bilinear symmetry <= 1e-8", worst_sym <= 1e-8, "max asymmetry " + sci(worst_sym)});

  double worst_eig = 0.0;
  double worst_overlap = 0.0;
  bool converged = true;
  const std::vector<std::vector<std::size_t>> small = {{4, 8, 3}, {3, 6, 5, 2}, {6, 9, 3}};
  for (const auto& sizes : small) {
    for (std::uint64_t s = 0; s < 3; ++s) {
      const SpectralCheck c = spectral_check(random_problem(sizes, 12, s), 5, s);
      worst_eig = std::max(worst_eig, c.max_relative_error);
      worst_overlap = std::max(worst_overlap, c.max_overlap);
      converged = converged && c.all_converged;
    }
  }
  checks.push_back({"top-5 eigenvalues vs. dense Hessian <= 1e-3", worst_eig <= 1e-3 && converged,
                    "max relative error " + sci(worst_eig) + (converged ? "" : ", some pairs did not converge")});
  checks.push_back({"eigenvector orthogonality <= 1e-6", worst_overlap <= 1e-6, "max overlap " + sci(worst_overlap)});

  const QuadraticSandboxCheck q = quadratic_sandbox_check();
  checks.push_back({"1-D quadratic: F1 = 0.5 lambda dw^2 to 1e-10", q.max_f1_error <= 1e-10 && q.f1_within_bound,
                    "max relative error " + sci(q.max_f1_error)});
  checks.push_back({"1-D quadratic: displacement lower bounds hold on GD trajectories",
                    q.gradnorm_violations == 0 && q.loss_violations == 0,
                    std::to_string(q.trajectories) + " runs per criterion; violations: gradient-norm " +
                        std::to_string(q.gradnorm_violations) + ", loss (lambda <= 2) " +
                        std::to_string(q.loss_violations) + ", loss (lambda > 2, outside the bound's range) " +
                        std::to_string(q.loss_violations_steep)});
  return checks;
}

}  // namespace driftlab
