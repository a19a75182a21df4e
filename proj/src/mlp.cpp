#include "driftlab/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "driftlab/error.hpp"
#include "driftlab/kernels.hpp"

namespace driftlab {

double dot(const ParamVector& a, const ParamVector& b) { return kernels::dot(a.span(), b.span()); }

double norm(const ParamVector& a) { return kernels::norm2(a.span()); }

ParamVector difference(const ParamVector& a, const ParamVector& b) {
  if (a.size() != b.size()) throw ConfigError("difference: length mismatch");
  ParamVector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = b[i] - a[i];
  return out;
}

Dropout::Dropout(double keep_prob, std::uint64_t seed) : keep_prob_(keep_prob), rng_(seed) {
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) {
    throw ConfigError("dropout keep probability must lie in (0, 1], got " + std::to_string(keep_prob));
  }
}

void Dropout::draw(std::size_t rows, std::size_t cols, Matrix& mask) {
  mask.assign_zero(rows, cols);
  for (double& m : mask.values()) m = rng_.bernoulli(keep_prob_) ? 1.0 : 0.0;
}

MlpModel::MlpModel(std::vector<std::size_t> layer_sizes) : sizes_(std::move(layer_sizes)) {
  if (sizes_.size() < 2) throw ConfigError("an MLP needs at least an input and an output size");
  if (std::any_of(sizes_.begin(), sizes_.end(), [](std::size_t s) { return s == 0; })) {
    throw ConfigError("layer sizes must be positive");
  }
  std::size_t offset = 0;
  for (std::size_t i = 0; i + 1 < sizes_.size(); ++i) {
    slices_.push_back({sizes_[i], sizes_[i + 1], offset});
    offset += sizes_[i] * sizes_[i + 1] + sizes_[i + 1];
  }
  params_ = ParamVector(offset);
}

MlpModel MlpModel::initialized(std::vector<std::size_t> layer_sizes, std::uint64_t seed) {
  MlpModel model(std::move(layer_sizes));
  Rng rng(seed);
  for (const auto& s : model.slices_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.fan_in));
    const std::size_t n = s.fan_in * s.fan_out + s.fan_out;
    for (std::size_t i = 0; i < n; ++i) model.params_[s.offset + i] = (2.0 * rng.uniform() - 1.0) * bound;
  }
  return model;
}

ConstMatrixView MlpModel::weights(std::size_t layer) const {
  const auto& s = slices_.at(layer);
  return {params_.span().data() + s.offset, s.fan_in, s.fan_out};
}

MatrixView MlpModel::weights(std::size_t layer) {
  const auto& s = slices_.at(layer);
  return {params_.span().data() + s.offset, s.fan_in, s.fan_out};
}

std::span<const double> MlpModel::bias(std::size_t layer) const {
  const auto& s = slices_.at(layer);
  return params_.span().subspan(s.offset + s.fan_in * s.fan_out, s.fan_out);
}

std::span<double> MlpModel::bias(std::size_t layer) {
  const auto& s = slices_.at(layer);
  return params_.span().subspan(s.offset + s.fan_in * s.fan_out, s.fan_out);
}

void MlpModel::unpack(const ParamVector& values) {
  if (values.size() != params_.size()) {
    throw ConfigError("unpack: expected " + std::to_string(params_.size()) + " parameters, got " +
                      std::to_string(values.size()));
  }
  params_ = values;
}

std::size_t MlpModel::layer_of(std::size_t param_index) const {
  for (std::size_t l = slices_.size(); l-- > 0;) {
    if (param_index >= slices_[l].offset) return l;
  }
  return 0;
}

namespace {

void check_batch(const MlpModel& model, const Matrix& inputs, std::span<const int> labels) {
  if (inputs.cols() != model.input_size()) {
    throw ConfigError("batch has " + std::to_string(inputs.cols()) + " features, model expects " +
                      std::to_string(model.input_size()));
  }
  if (inputs.rows() == 0) throw ConfigError("empty batch");
  if (labels.size() != inputs.rows()) throw ConfigError("label count does not match batch rows");
  const int classes = static_cast<int>(model.output_size());
  for (int y : labels) {
    if (y < 0 || y >= classes) throw ConfigError("label " + std::to_string(y) + " out of range");
  }
}

void check_finite(const Matrix& m, std::size_t layer, const char* what) {
  if (!m.all_finite()) throw NumericalError(std::string("non-finite ") + what, static_cast<std::ptrdiff_t>(layer));
}

// Parameter-space views over a flat gradient buffer laid out like the model.
MatrixView weight_view(const MlpModel& model, std::span<double> flat, std::size_t layer) {
  const auto& s = model.slices()[layer];
  return {flat.data() + s.offset, s.fan_in, s.fan_out};
}

std::span<double> bias_view(const MlpModel& model, std::span<double> flat, std::size_t layer) {
  const auto& s = model.slices()[layer];
  return flat.subspan(s.offset + s.fan_in * s.fan_out, s.fan_out);
}

ConstMatrixView weight_view(const MlpModel& model, std::span<const double> flat, std::size_t layer) {
  const auto& s = model.slices()[layer];
  return {flat.data() + s.offset, s.fan_in, s.fan_out};
}

std::span<const double> bias_view(const MlpModel& model, std::span<const double> flat, std::size_t layer) {
  const auto& s = model.slices()[layer];
  return flat.subspan(s.offset + s.fan_in * s.fan_out, s.fan_out);
}

ConstMatrixView layer_input(const ForwardCache& cache, std::size_t layer) {
  return layer == 0 ? cache.input : cache.hidden[layer - 1].view();
}

// delta ← delta ⊙ d(hidden)/d(pre) for hidden layer `h`.
void apply_activation_derivative(const ForwardCache& cache, std::size_t h, Matrix& delta) {
  const Matrix& pre = cache.pre[h];
  const bool masked = !cache.masks.empty();
  double* d = delta.data();
  const double* z = pre.data();
  const std::size_t n = delta.size();
  if (masked) {
    const double* m = cache.masks[h].data();
    const double s = cache.dropout_scale;
    for (std::size_t i = 0; i < n; ++i) d[i] = z[i] > 0.0 ? d[i] * m[i] * s : 0.0;
  } else {
    for (std::size_t i = 0; i < n; ++i) d[i] = z[i] > 0.0 ? d[i] : 0.0;
  }
}

// Backpropagates `delta` (gradient w.r.t. the logits) and writes the
// parameter gradient into `grad`.
void backward(const MlpModel& model, const ForwardCache& cache, Matrix delta, std::span<double> grad) {
  for (std::size_t l = model.layer_count(); l-- > 0;) {
    kernels::matmul_tn(layer_input(cache, l), delta, weight_view(model, grad, l));
    kernels::column_sums(delta, bias_view(model, grad, l));
    if (l == 0) break;
    Matrix prev(delta.rows(), model.slices()[l].fan_in);
    kernels::matmul_nt(delta, model.weights(l), prev);
    apply_activation_derivative(cache, l - 1, prev);
    delta = std::move(prev);
  }
}

}  // namespace

ForwardResult forward(const MlpModel& model, const Matrix& inputs, Mode mode, Dropout* dropout) {
  if (inputs.cols() != model.input_size()) {
    throw ConfigError("batch has " + std::to_string(inputs.cols()) + " features, model expects " +
                      std::to_string(model.input_size()));
  }
  ForwardResult result;
  ForwardCache& cache = result.cache;
  cache.input = inputs.view();
  const bool use_dropout = mode == Mode::train && dropout != nullptr && dropout->active();
  if (use_dropout) cache.dropout_scale = dropout->scale();

  const std::size_t layers = model.layer_count();
  const std::size_t rows = inputs.rows();
  for (std::size_t l = 0; l < layers; ++l) {
    Matrix z(rows, model.slices()[l].fan_out);
    kernels::matmul(layer_input(cache, l), model.weights(l), z);
    kernels::add_row_vector(z, model.bias(l));
    check_finite(z, l, "pre-activation");
    if (l + 1 == layers) {
      result.logits = std::move(z);
      break;
    }
    Matrix h(rows, z.cols());
    for (std::size_t i = 0; i < z.size(); ++i) h.data()[i] = z.data()[i] > 0.0 ? z.data()[i] : 0.0;
    if (use_dropout) {
      Matrix mask;
      dropout->draw(rows, z.cols(), mask);
      const double s = dropout->scale();
      for (std::size_t i = 0; i < h.size(); ++i) h.data()[i] *= mask.data()[i] * s;
      cache.masks.push_back(std::move(mask));
    }
    cache.pre.push_back(std::move(z));
    cache.hidden.push_back(std::move(h));
  }
  return result;
}

double softmax_cross_entropy(const Matrix& logits, std::span<const int> labels, Matrix* dlogits,
                             double grad_scale) {
  const std::size_t rows = logits.rows();
  const std::size_t cols = logits.cols();
  if (labels.size() != rows) throw ConfigError("label count does not match logits rows");
  if (dlogits != nullptr) dlogits->assign_zero(rows, cols);
  double total = 0.0;
  std::vector<double> p(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto z = logits.row(r);
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      p[c] = std::exp(z[c] - zmax);
      sum += p[c];
    }
    for (double& v : p) v /= sum;
    const auto y = static_cast<std::size_t>(labels[r]);
    total += -std::log(std::max(p[y], 1e-30));
    if (dlogits != nullptr) {
      auto d = dlogits->row(r);
      for (std::size_t c = 0; c < cols; ++c) d[c] = (p[c] - (c == y ? 1.0 : 0.0)) * grad_scale;
    }
  }
  return total / static_cast<double>(rows);
}

double loss_and_grad(const MlpModel& model, const Batch& batch, Mode mode, Dropout* dropout,
                     std::span<double> grad) {
  check_batch(model, batch.inputs, batch.labels);
  if (grad.size() != model.parameter_count()) throw ConfigError("gradient buffer has the wrong length");
  auto fwd = forward(model, batch.inputs, mode, dropout);
  Matrix delta;
  const double value = softmax_cross_entropy(fwd.logits, batch.labels, &delta,
                                             1.0 / static_cast<double>(batch.size()));
  if (!std::isfinite(value)) {
    throw NumericalError("non-finite loss", static_cast<std::ptrdiff_t>(model.layer_count() - 1));
  }
  backward(model, fwd.cache, std::move(delta), grad);
  return value;
}

LossGrad loss_and_grad(const MlpModel& model, const Batch& batch, Mode mode, Dropout* dropout) {
  LossGrad out;
  out.grad = ParamVector(model.parameter_count());
  out.loss = loss_and_grad(model, batch, mode, dropout, out.grad.span());
  return out;
}

double loss(const MlpModel& model, const Batch& batch) {
  check_batch(model, batch.inputs, batch.labels);
  const auto fwd = forward(model, batch.inputs, Mode::eval);
  return softmax_cross_entropy(fwd.logits, batch.labels);
}

ParamVector hvp(const MlpModel& model, const Batch& batch, const ParamVector& v) {
  check_batch(model, batch.inputs, batch.labels);
  const std::size_t d = model.parameter_count();
  if (v.size() != d) throw ConfigError("hvp: direction has the wrong length");
  ParamVector out(d);
  if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; })) return out;

  const std::size_t layers = model.layer_count();
  const std::size_t rows = batch.size();
  const auto fwd = forward(model, batch.inputs, Mode::eval);
  const ForwardCache& cache = fwd.cache;

  // Forward pass of directional derivatives: r_pre[l] = R{z_l}, r_hidden[l] = R{a_{l+1}}.
  std::vector<Matrix> r_hidden;
  Matrix r_logits;
  for (std::size_t l = 0; l < layers; ++l) {
    Matrix rz(rows, model.slices()[l].fan_out);
    kernels::matmul(layer_input(cache, l), weight_view(model, v.span(), l), rz);
    kernels::add_row_vector(rz, bias_view(model, v.span(), l));
    if (l > 0) kernels::matmul(r_hidden[l - 1], model.weights(l), rz, true);
    if (l + 1 == layers) {
      r_logits = std::move(rz);
      break;
    }
    apply_activation_derivative(cache, l, rz);
    r_hidden.push_back(std::move(rz));
  }

  // Output layer: δ = (p - y)/B and R{δ} = (p ⊙ (R{z} - <p, R{z}>))/B.
  const double inv_b = 1.0 / static_cast<double>(rows);
  Matrix delta;
  softmax_cross_entropy(fwd.logits, batch.labels, &delta, inv_b);
  Matrix r_delta(rows, model.output_size());
  for (std::size_t r = 0; r < rows; ++r) {
    const auto z = fwd.logits.row(r);
    const auto rz = r_logits.row(r);
    const double zmax = *std::max_element(z.begin(), z.end());
    std::vector<double> p(z.size());
    double sum = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) {
      p[c] = std::exp(z[c] - zmax);
      sum += p[c];
    }
    double mean_rz = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) {
      p[c] /= sum;
      mean_rz += p[c] * rz[c];
    }
    auto rd = r_delta.row(r);
    for (std::size_t c = 0; c < z.size(); ++c) rd[c] = p[c] * (rz[c] - mean_rz) * inv_b;
  }

  std::span<double> hv = out.span();
  for (std::size_t l = layers; l-- > 0;) {
    auto hw = weight_view(model, hv, l);
    kernels::matmul_tn(layer_input(cache, l), r_delta, hw);
    if (l > 0) kernels::matmul_tn(r_hidden[l - 1], delta, hw, true);
    kernels::column_sums(r_delta, bias_view(model, hv, l));
    if (l == 0) break;
    const std::size_t fan_in = model.slices()[l].fan_in;
    Matrix prev(rows, fan_in);
    kernels::matmul_nt(delta, model.weights(l), prev);
    Matrix r_prev(rows, fan_in);
    kernels::matmul_nt(r_delta, model.weights(l), r_prev);
    kernels::matmul_nt(delta, weight_view(model, v.span(), l), r_prev, true);
    apply_activation_derivative(cache, l - 1, prev);
    apply_activation_derivative(cache, l - 1, r_prev);
    delta = std::move(prev);
    r_delta = std::move(r_prev);
  }
  return out;
}

void accumulate_squared_scores(const MlpModel& model, const Matrix& inputs, std::span<const int> labels,
                               std::span<double> out) {
  check_batch(model, inputs, labels);
  if (out.size() != model.parameter_count()) throw ConfigError("score buffer has the wrong length");
  const auto fwd = forward(model, inputs, Mode::eval);
  Matrix delta;
  softmax_cross_entropy(fwd.logits, labels, &delta, 1.0);
  Matrix squared_input;
  Matrix squared_delta;
  for (std::size_t l = model.layer_count(); l-- > 0;) {
    const ConstMatrixView a = layer_input(fwd.cache, l);
    squared_input.assign_zero(a.rows, a.cols);
    for (std::size_t i = 0; i < squared_input.size(); ++i) squared_input.data()[i] = a.data[i] * a.data[i];
    squared_delta.assign_zero(delta.rows(), delta.cols());
    for (std::size_t i = 0; i < delta.size(); ++i) squared_delta.data()[i] = delta.data()[i] * delta.data()[i];
    kernels::matmul_tn(squared_input, squared_delta, weight_view(model, out, l), true);
    kernels::column_sums(squared_delta, bias_view(model, out, l), true);
    if (l == 0) break;
    Matrix prev(delta.rows(), model.slices()[l].fan_in);
    kernels::matmul_nt(delta, model.weights(l), prev);
    apply_activation_derivative(fwd.cache, l - 1, prev);
    delta = std::move(prev);
  }
}

std::size_t count_correct(const Matrix& logits, std::span<const int> labels) {
  std::size_t correct = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto z = logits.row(r);
    const auto best = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
    if (best == labels[r]) ++correct;
  }
  return correct;
}

}  // namespace driftlab
