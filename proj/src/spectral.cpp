#include "driftlab/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>

#include "driftlab/error.hpp"
#include "driftlab/kernels.hpp"
#include "driftlab/rng.hpp"

namespace driftlab {

namespace {

// Two Gram-Schmidt passes: one loses orthogonality when v lies mostly in
// the span of the basis.
void orthogonalize(ParamVector& v, const std::vector<ParamVector>& basis) {
  for (int pass = 0; pass < 2; ++pass) {
    for (const ParamVector& b : basis) kernels::axpy(-dot(b, v), b.span(), v.span());
  }
}

bool normalize(ParamVector& v) {
  const double n = norm(v);
  if (!(n > 0.0) || !std::isfinite(n)) return false;
  for (double& x : v) x /= n;
  return true;
}

}  // namespace

double SpectrumReport::lambda_max() const {
  return eigenvalues.empty() ? 0.0 : std::max(eigenvalues.front(), 0.0);
}

SpectrumReport top_k_eigen(const LinearOperator& h, std::size_t dim, const PowerIterationOptions& options) {
  if (options.k > dim) {
    throw ConfigError("k = " + std::to_string(options.k) + " exceeds the dimension " + std::to_string(dim));
  }
  if (!(options.tol > 0.0)) throw ConfigError("spectral tol must be positive");

  struct Pair {
    double value;
    ParamVector vector;
    std::size_t iterations;
    double residual;
    bool converged;
  };
  std::vector<Pair> pairs;
  std::vector<ParamVector> basis;
  std::vector<double> basis_values;

  auto deflated = [&](const ParamVector& v, ParamVector& hv_raw) {
    hv_raw = h(v);
    if (hv_raw.size() != dim) throw ConfigError("operator returned a vector of the wrong length");
    ParamVector w = hv_raw;
    for (std::size_t i = 0; i < basis.size(); ++i) {
      kernels::axpy(-basis_values[i] * dot(basis[i], v), basis[i].span(), w.span());
    }
    return w;
  };

  for (std::size_t j = 0; j < options.k; ++j) {
    Rng rng(mix_seed(options.seed, static_cast<std::uint64_t>(j)));
    ParamVector v(dim);
    for (double& x : v) x = rng.normal();
    orthogonalize(v, basis);
    if (!normalize(v)) throw NumericalError("power iteration start vector vanished", -1);

    Pair p{0.0, v, 0, 0.0, false};
    ParamVector hv_raw;
    double previous = 0.0;
    bool have_previous = false;
    for (std::size_t it = 1; it <= std::max<std::size_t>(options.max_iters, 1); ++it) {
      ParamVector w = deflated(v, hv_raw);
      const double lambda = dot(v, w);
      // Residual within the complement of the pairs already found; errors in
      // those pairs are cleaned up by the Rayleigh-Ritz pass below.
      ParamVector r = hv_raw;
      kernels::axpy(-lambda, v.span(), r.span());
      orthogonalize(r, basis);
      const double residual = norm(r);
      const double scale = std::max(1.0, std::abs(lambda));
      if (!std::isfinite(lambda)) throw NumericalError("non-finite Rayleigh quotient", -1);
      p = Pair{lambda, v, it, residual, false};
      if (have_previous && std::abs(lambda - previous) <= options.tol * scale && residual <= 10.0 * options.tol * scale) {
        p.converged = true;
        break;
      }
      previous = lambda;
      have_previous = true;
      orthogonalize(w, basis);
      if (!normalize(w)) {
        // v lies in the null space of the deflated operator: λ = 0 exactly.
        p.converged = residual <= 10.0 * options.tol * scale;
        break;
      }
      v = std::move(w);
    }
    basis.push_back(p.vector);
    basis_values.push_back(p.value);
    pairs.push_back(std::move(p));
  }

  // Rayleigh-Ritz on the span of the deflated vectors, then the residual of
  // the undeflated operator decides convergence.
  const std::size_t k = pairs.size();
  std::vector<ParamVector> hvs;
  for (const Pair& p : pairs) hvs.push_back(h(p.vector));
  Matrix projected(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      projected(i, j) = projected(j, i) = 0.5 * (dot(pairs[i].vector, hvs[j]) + dot(pairs[j].vector, hvs[i]));
    }
  }
  const SymmetricEigen ritz = jacobi_eigen(projected);
  std::vector<Pair> refined;
  for (std::size_t j = 0; j < k; ++j) {
    ParamVector v(dim), hv(dim);
    for (std::size_t i = 0; i < k; ++i) {
      kernels::axpy(ritz.vectors(i, j), pairs[i].vector.span(), v.span());
      kernels::axpy(ritz.vectors(i, j), hvs[i].span(), hv.span());
    }
    const double lambda = ritz.values[j];
    kernels::axpy(-lambda, v.span(), hv.span());
    const double residual = norm(hv);
    const bool ok = residual <= 10.0 * options.tol * std::max(1.0, std::abs(lambda));
    // Iteration count of the deflated pair this Ritz vector mostly came from.
    std::size_t source = 0;
    for (std::size_t i = 1; i < k; ++i) {
      if (std::abs(ritz.vectors(i, j)) > std::abs(ritz.vectors(source, j))) source = i;
    }
    refined.push_back(Pair{lambda, std::move(v), pairs[source].iterations, residual, ok});
  }
  pairs = std::move(refined);
  SpectrumReport report;
  for (Pair& p : pairs) {
    report.eigenvalues.push_back(p.value);
    report.iterations.push_back(p.iterations);
    report.residuals.push_back(p.residual);
    report.converged.push_back(p.converged);
    if (options.keep_vectors) report.eigenvectors.push_back(std::move(p.vector));
  }
  return report;
}

LinearOperator loss_hessian_operator(const MlpModel& model, const Batch& probe, std::size_t chunk) {
  if (probe.size() == 0) throw ConfigError("curvature probe is empty");
  chunk = std::max<std::size_t>(chunk, 1);
  if (probe.size() <= chunk) {
    return [&model, &probe](const ParamVector& v) { return hvp(model, probe, v); };
  }
  // Split once; each chunk's HVP is weighted by its share of the probe.
  auto parts = std::make_shared<std::vector<Batch>>();
  const std::size_t dim = probe.inputs.cols();
  for (std::size_t begin = 0; begin < probe.size(); begin += chunk) {
    const std::size_t count = std::min(chunk, probe.size() - begin);
    Batch b;
    b.inputs.assign_zero(count, dim);
    std::copy(probe.inputs.data() + begin * dim, probe.inputs.data() + (begin + count) * dim, b.inputs.data());
    b.labels.assign(probe.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                    probe.labels.begin() + static_cast<std::ptrdiff_t>(begin + count));
    parts->push_back(std::move(b));
  }
  const double total = static_cast<double>(probe.size());
  return [&model, parts, total](const ParamVector& v) {
    ParamVector out(v.size());
    for (const Batch& b : *parts) {
      const ParamVector part = hvp(model, b, v);
      kernels::axpy(static_cast<double>(b.size()) / total, part.span(), out.span());
    }
    return out;
  };
}

Batch probe_subsample(const Task& task, std::size_t size, std::uint64_t seed) {
  const std::size_t n = task.size(Split::train);
  size = std::min(size, n);
  Rng rng(mix_seed(mix_seed(seed, "probe"), task.index));
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  for (std::size_t i = 0; i < size; ++i) std::swap(rows[i], rows[i + rng.uniform_int(n - i)]);
  rows.resize(size);
  std::sort(rows.begin(), rows.end());
  Batch out;
  task.gather(Split::train, rows, out);
  return out;
}

SpectrumReport loss_spectrum(const MlpModel& model, const Batch& probe, const PowerIterationOptions& options) {
  SpectrumReport report = top_k_eigen(loss_hessian_operator(model, probe), model.parameter_count(), options);
  report.probe_sample_size = probe.size();
  return report;
}

ParamVector hvp_central_difference(const MlpModel& model, const Batch& batch, const ParamVector& v) {
  const double vn = norm(v);
  if (vn == 0.0) return ParamVector(v.size());
  const ParamVector w = model.pack();
  const double eps = 1e-4 * (1.0 + norm(w)) / vn;
  MlpModel probe = model;
  ParamVector shifted = w;
  for (std::size_t i = 0; i < w.size(); ++i) shifted[i] = w[i] + eps * v[i];
  probe.unpack(shifted);
  const ParamVector gp = loss_and_grad(probe, batch).grad;
  for (std::size_t i = 0; i < w.size(); ++i) shifted[i] = w[i] - eps * v[i];
  probe.unpack(shifted);
  const ParamVector gm = loss_and_grad(probe, batch).grad;
  ParamVector out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = (gp[i] - gm[i]) / (2.0 * eps);
  return out;
}

DenseHessian dense_hessian_oracle(const std::function<ParamVector(const ParamVector&)>& grad, const ParamVector& w) {
  const std::size_t d = w.size();
  if (d > kDenseHessianMaxParams) {
    throw DomainError("dense Hessian refused: " + std::to_string(d) + " parameters exceed the limit of " +
                      std::to_string(kDenseHessianMaxParams));
  }
  // Small enough that ReLU pre-activations rarely cross zero between the
  // two gradient evaluations near a trained checkpoint.
  const double eps = 1e-7 * (1.0 + norm(w));
  Matrix raw(d, d);
  ParamVector shifted = w;
  for (std::size_t i = 0; i < d; ++i) {
    shifted[i] = w[i] + eps;
    const ParamVector gp = grad(shifted);
    shifted[i] = w[i] - eps;
    const ParamVector gm = grad(shifted);
    shifted[i] = w[i];
    for (std::size_t r = 0; r < d; ++r) raw(r, i) = (gp[r] - gm[r]) / (2.0 * eps);
  }
  DenseHessian out;
  out.h = Matrix(d, d);
  double max_abs = 0.0;
  double max_asym = 0.0;
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      max_abs = std::max(max_abs, std::abs(raw(r, c)));
      max_asym = std::max(max_asym, std::abs(raw(r, c) - raw(c, r)));
      out.h(r, c) = 0.5 * (raw(r, c) + raw(c, r));
    }
  }
  out.asymmetry = max_abs > 0.0 ? max_asym / max_abs : 0.0;
  return out;
}

DenseHessian dense_hessian_oracle(const MlpModel& model, const Batch& batch) {
  if (model.parameter_count() > kDenseHessianMaxParams) {
    throw DomainError("dense Hessian refused: " + std::to_string(model.parameter_count()) +
                      " parameters exceed the limit of " + std::to_string(kDenseHessianMaxParams));
  }
  MlpModel probe = model;
  return dense_hessian_oracle(
      [&](const ParamVector& w) {
        probe.unpack(w);
        return loss_and_grad(probe, batch).grad;
      },
      model.pack());
}

SymmetricEigen jacobi_eigen(const Matrix& input, double tol, std::size_t max_sweeps) {
  const std::size_t n = input.rows();
  if (input.cols() != n) throw ConfigError("jacobi_eigen needs a square matrix");
  Matrix a = input;
  Matrix v(n, n);
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

  double frob = 0.0;
  for (double x : a.values()) frob += x * x;
  frob = std::sqrt(frob);

  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(off) <= tol * std::max(frob, 1e-300)) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });
  SymmetricEigen out;
  out.vectors = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    out.values.push_back(a(order[j], order[j]));
    for (std::size_t k = 0; k < n; ++k) out.vectors(k, j) = v(k, order[j]);
  }
  return out;
}

DisplacementRecord displacement(const ParamVector& w_a, const ParamVector& w_b, const MlpModel* model) {
  if (w_a.size() != w_b.size()) {
    throw ConfigError("displacement: parameter vectors have lengths " + std::to_string(w_a.size()) + " and " +
                      std::to_string(w_b.size()));
  }
  DisplacementRecord rec;
  rec.delta_norm = norm(difference(w_a, w_b));
  if (model != nullptr) {
    if (model->parameter_count() != w_a.size()) throw ConfigError("displacement: model layout does not match");
    for (const auto& s : model->slices()) {
      const std::size_t end = s.offset + s.fan_in * s.fan_out + s.fan_out;
      double sq = 0.0;
      for (std::size_t i = s.offset; i < end; ++i) sq += (w_b[i] - w_a[i]) * (w_b[i] - w_a[i]);
      rec.layer_norms.push_back(std::sqrt(sq));
    }
  }
  return rec;
}

double param_norm(const ParamVector& w) { return norm(w); }

}  // namespace driftlab
