#include "driftlab/optim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>

#include "driftlab/error.hpp"
#include "driftlab/kernels.hpp"
#include "driftlab/rng.hpp"

namespace driftlab {

void RegimeConfig::validate() const {
  if (!(initial_lr > 0.0) || !std::isfinite(initial_lr)) {
    throw ConfigError("lr must be positive, got " + std::to_string(initial_lr));
  }
  if (!(lr_decay_per_task > 0.0 && lr_decay_per_task <= 1.0)) {
    throw ConfigError("lr_decay must lie in (0, 1], got " + std::to_string(lr_decay_per_task));
  }
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (!(dropout_keep > 0.0 && dropout_keep <= 1.0)) {
    throw ConfigError("dropout must lie in [0, 1), got " + std::to_string(1.0 - dropout_keep));
  }
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw ConfigError("weight_decay must be non-negative, got " + std::to_string(weight_decay));
  }
}

RegimeConfig preset_regime(std::string_view name) {
  RegimeConfig r;
  if (name == "plastic-exp1") {
    r.initial_lr = 0.01;
    r.batch_size = 64;
    r.epochs_per_task = 5;
  } else if (name == "stable-exp1") {
    r.initial_lr = 0.1;
    r.lr_decay_per_task = 0.4;
    r.batch_size = 16;
    r.dropout_keep = 0.5;
    r.epochs_per_task = 5;
  } else if (name == "plastic-exp2") {
    r.initial_lr = 0.01;
    r.batch_size = 10;
  } else if (name == "stable-exp2") {
    r.initial_lr = 0.1;
    r.lr_decay_per_task = 0.8;
    r.batch_size = 10;
    r.dropout_keep = 0.5;
  } else if (name == "baseline-exp2") {
    r.initial_lr = 0.1;
    r.batch_size = 10;
  } else if (name == "plastic-table1") {
    r.initial_lr = 0.1;
    r.batch_size = 256;
    r.epochs_per_task = 5;
  } else if (name == "stable-table1") {
    r.initial_lr = 0.1;
    r.lr_decay_per_task = 0.4;
    r.batch_size = 16;
    r.dropout_keep = 0.75;
    r.epochs_per_task = 5;
  } else {
    throw ConfigError("unknown regime preset '" + std::string(name) + "'");
  }
  return r;
}

std::vector<std::string> preset_names() {
  return {"plastic-exp1", "stable-exp1", "plastic-exp2", "stable-exp2",
          "baseline-exp2", "plastic-table1", "stable-table1"};
}

RegimeConfig stabilize(const RegimeConfig& base) {
  RegimeConfig r = base;
  r.dropout_keep = 0.75;
  r.lr_decay_per_task = 0.65;
  r.batch_size = std::min<std::size_t>(base.batch_size, 10);
  return r;
}

double lr_for_task(const RegimeConfig& config, std::size_t task_index) {
  return config.initial_lr * std::pow(config.lr_decay_per_task, static_cast<double>(task_index));
}

double sgd_step(MlpModel& model, std::span<const double> grad, double lr, double weight_decay,
                std::size_t step_index) {
  auto w = model.parameters();
  if (grad.size() != w.size()) throw ConfigError("sgd_step: gradient has the wrong length");
  double sq = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double update = lr * (grad[i] + weight_decay * w[i]);
    const double next = w[i] - update;
    if (!std::isfinite(next)) {
      throw NumericalError("non-finite update at step " + std::to_string(step_index),
                           static_cast<std::ptrdiff_t>(model.layer_of(i)));
    }
    w[i] = next;
    sq += update * update;
  }
  return std::sqrt(sq);
}

void TaskTrainSource::gather(std::span<const std::size_t> rows, Batch& out) const {
  if (on_access_) on_access_(task_.index);
  task_.gather(Split::train, rows, out);
}

TrainedCheckpoint train_task(MlpModel& model, const ExampleSource& source, const RegimeConfig& config,
                             std::size_t task_index, std::uint64_t seed, TrainingPlugin* plugin) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const std::size_t n = source.size();
  if (n == 0) throw ConfigError("task " + std::to_string(task_index) + " has no training data");

  TrainedCheckpoint out;
  const double lr = lr_for_task(config, task_index);
  Rng shuffle_rng(mix_seed(mix_seed(seed, "shuffle"), task_index));
  Dropout dropout(config.dropout_keep, mix_seed(mix_seed(seed, "dropout"), task_index));

  std::vector<std::size_t> order(n);
  std::vector<double> grad(model.parameter_count());
  Batch batch;
  Batch combined;
  for (std::size_t epoch = 0; epoch < config.epochs_per_task; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
      const std::size_t end = std::min(n, begin + config.batch_size);
      source.gather(std::span<const std::size_t>(order).subspan(begin, end - begin), batch);
      const Batch* used = &batch;
      if (plugin != nullptr && plugin->extend_batch(batch, combined)) used = &combined;
      loss_sum += loss_and_grad(model, *used, Mode::train, &dropout, grad);
      if (plugin != nullptr) plugin->adjust_gradient(model, grad, dropout);
      out.exit_grad_norm = kernels::norm2(grad);
      sgd_step(model, grad, lr, config.weight_decay, out.steps);
      if (plugin != nullptr) plugin->after_step(batch);
      ++out.steps;
      ++batches;
    }
    out.final_train_loss = loss_sum / static_cast<double>(batches);
  }
  out.params = model.pack();
  out.wallclock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace driftlab
