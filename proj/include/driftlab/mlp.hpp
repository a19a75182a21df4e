#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "driftlab/matrix.hpp"
#include "driftlab/rng.hpp"

namespace driftlab {

/// Flattened model parameters in canonical order: layer 0 weights
/// (row-major, in x out), layer 0 biases, layer 1 weights, ...
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::size_t n, double fill = 0.0) : values_(n, fill) {}
  explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {}

  std::size_t size() const { return values_.size(); }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<double> span() { return values_; }
  std::span<const double> span() const { return values_; }
  auto begin() { return values_.begin(); }
  auto end() { return values_.end(); }
  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }
  const std::vector<double>& vector() const { return values_; }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  std::vector<double> values_;
};

double dot(const ParamVector& a, const ParamVector& b);
double norm(const ParamVector& a);
/// b - a
ParamVector difference(const ParamVector& a, const ParamVector& b);

struct Batch {
  Matrix inputs;            // batch x features
  std::vector<int> labels;  // one class per row

  std::size_t size() const { return labels.size(); }
};

enum class Mode { train, eval };

/// Source of inverted-dropout masks for the hidden layers.
class Dropout {
 public:
  Dropout(double keep_prob, std::uint64_t seed);

  double keep_prob() const { return keep_prob_; }
  double scale() const { return 1.0 / keep_prob_; }
  bool active() const { return keep_prob_ < 1.0; }

  /// Fills `mask` (rows x cols) with independent Bernoulli(keep_prob) 0/1 draws.
  void draw(std::size_t rows, std::size_t cols, Matrix& mask);

 private:
  double keep_prob_;
  Rng rng_;
};

/// Fully connected network; ReLU on hidden layers, identity on the output.
class MlpModel {
 public:
  struct LayerSlice {
    std::size_t fan_in = 0;
    std::size_t fan_out = 0;
    std::size_t offset = 0;  // first weight in the flat buffer; biases follow the weights
  };

  explicit MlpModel(std::vector<std::size_t> layer_sizes);

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  static MlpModel initialized(std::vector<std::size_t> layer_sizes, std::uint64_t seed);

  const std::vector<std::size_t>& layer_sizes() const { return sizes_; }
  std::size_t layer_count() const { return slices_.size(); }
  std::size_t input_size() const { return sizes_.front(); }
  std::size_t output_size() const { return sizes_.back(); }
  std::size_t parameter_count() const { return params_.size(); }
  const std::vector<LayerSlice>& slices() const { return slices_; }

  ConstMatrixView weights(std::size_t layer) const;
  MatrixView weights(std::size_t layer);
  std::span<const double> bias(std::size_t layer) const;
  std::span<double> bias(std::size_t layer);

  std::span<const double> parameters() const { return params_.span(); }
  std::span<double> parameters() { return params_.span(); }

  ParamVector pack() const { return params_; }
  void unpack(const ParamVector& values);

  /// Dense layer owning the flat parameter index.
  std::size_t layer_of(std::size_t param_index) const;

 private:
  std::vector<std::size_t> sizes_;
  std::vector<LayerSlice> slices_;
  ParamVector params_;
};

/// Activation record kept for backpropagation.
struct ForwardCache {
  ConstMatrixView input;
  std::vector<Matrix> pre;     // pre-activation of each hidden layer
  std::vector<Matrix> hidden;  // post-ReLU (and post-dropout) hidden activations
  std::vector<Matrix> masks;   // dropout masks; empty when dropout is off
  double dropout_scale = 1.0;
};

struct ForwardResult {
  Matrix logits;
  ForwardCache cache;
};

/// `inputs` must outlive the returned cache.
ForwardResult forward(const MlpModel& model, const Matrix& inputs, Mode mode,
                      Dropout* dropout = nullptr);

/// Mean softmax cross-entropy. When `dlogits` is non-null it receives
/// (softmax - onehot) * `grad_scale`.
double softmax_cross_entropy(const Matrix& logits, std::span<const int> labels,
                             Matrix* dlogits = nullptr, double grad_scale = 1.0);

struct LossGrad {
  double loss = 0.0;
  ParamVector grad;
};

/// Mean cross-entropy over the batch and its gradient, written to `grad`
/// (length parameter_count()).
double loss_and_grad(const MlpModel& model, const Batch& batch, Mode mode, Dropout* dropout,
                     std::span<double> grad);
LossGrad loss_and_grad(const MlpModel& model, const Batch& batch, Mode mode = Mode::eval,
                       Dropout* dropout = nullptr);

/// Evaluation-mode loss.
double loss(const MlpModel& model, const Batch& batch);

/// Exact Hessian-vector product of the evaluation-mode mean loss, by the
/// R-operator (forward-mode directional derivative of backprop).
ParamVector hvp(const MlpModel& model, const Batch& batch, const ParamVector& v);

/// out += Σ_examples (∇_w log p(labels[m] | x_m))², element-wise, in
/// evaluation mode. Per-example gradients are never materialised: for a
/// dense layer, Σ_m (a_m ⊗ δ_m)² = (a∘a)ᵀ(δ∘δ).
void accumulate_squared_scores(const MlpModel& model, const Matrix& inputs,
                               std::span<const int> labels, std::span<double> out);

/// Number of rows whose arg-max logit equals the label.
std::size_t count_correct(const Matrix& logits, std::span<const int> labels);

}  // namespace driftlab
