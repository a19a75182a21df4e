#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "driftlab/mlp.hpp"
#include "driftlab/tasks.hpp"

namespace driftlab {

/// Training-regime knobs. γ = 1, keep = 1 and weight_decay = 0 is plain SGD.
struct RegimeConfig {
  double initial_lr = 0.01;
  double lr_decay_per_task = 1.0;  // γ in (0, 1], applied once per finished task
  std::size_t batch_size = 10;
  double dropout_keep = 1.0;       // 1 - dropout probability, in (0, 1]
  double weight_decay = 0.0;
  std::size_t epochs_per_task = 1;

  /// Throws ConfigError naming the first out-of-range field.
  void validate() const;

  friend bool operator==(const RegimeConfig&, const RegimeConfig&) = default;
};

/// Named regimes:
///   plastic-exp1   lr 0.01, batch 64, 5 epochs
///   stable-exp1    lr 0.1, γ 0.4, batch 16, dropout 0.5, 5 epochs
///   plastic-exp2   lr 0.01, batch 10, 1 epoch
///   stable-exp2    lr 0.1, γ 0.8, batch 10, dropout 0.5, 1 epoch
///   baseline-exp2  lr 0.1, batch 10, 1 epoch (EWC, A-GEM, ER)
///   plastic-table1 lr 0.1, batch 256, 5 epochs
///   stable-table1  lr 0.1, γ 0.4, batch 16, dropout 0.25, 5 epochs
RegimeConfig preset_regime(std::string_view name);
std::vector<std::string> preset_names();

/// The stabilized counterpart of a baseline regime: dropout 0.25, γ 0.65,
/// batch size capped at 10. The learning rate and epochs are kept.
RegimeConfig stabilize(const RegimeConfig& base);

/// η₀·γ^task_index (0-based), constant within the task.
double lr_for_task(const RegimeConfig& config, std::size_t task_index);

/// w ← w − lr·(grad + weight_decay·w). Returns the norm of the applied step.
/// Throws NumericalError (naming the step and layer) on a non-finite update.
double sgd_step(MlpModel& model, std::span<const double> grad, double lr, double weight_decay,
                std::size_t step_index = 0);

/// Rows a training loop can draw mini-batches from.
class ExampleSource {
 public:
  virtual ~ExampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual void gather(std::span<const std::size_t> rows, Batch& out) const = 0;
};

/// The training split of one task.
class TaskTrainSource final : public ExampleSource {
 public:
  explicit TaskTrainSource(const Task& task, std::function<void(std::size_t)> on_access = {})
      : task_(task), on_access_(std::move(on_access)) {}
  std::size_t size() const override { return task_.size(Split::train); }
  void gather(std::span<const std::size_t> rows, Batch& out) const override;

 private:
  const Task& task_;
  std::function<void(std::size_t)> on_access_;
};

/// Hooks that let continual-learning methods alter plain SGD.
class TrainingPlugin {
 public:
  virtual ~TrainingPlugin() = default;
  /// Returns true after writing current + extra examples into `combined`.
  virtual bool extend_batch(const Batch& /*current*/, Batch& /*combined*/) { return false; }
  /// May rewrite the gradient in place before the step.
  virtual void adjust_gradient(const MlpModel& /*model*/, std::span<double> /*grad*/, Dropout& /*dropout*/) {}
  /// Sees the current-task examples after the step has been applied.
  virtual void after_step(const Batch& /*current*/) {}
};

struct TrainedCheckpoint {
  ParamVector params;
  double final_train_loss = 0.0;  // mean mini-batch loss over the last epoch
  double wallclock_s = 0.0;
  double exit_grad_norm = 0.0;    // gradient norm of the last step
  std::size_t steps = 0;
};

/// epochs_per_task epochs of shuffled mini-batch SGD at lr_for_task. The
/// shuffle and dropout streams depend only on (seed, task_index). The last
/// partial mini-batch is kept.
TrainedCheckpoint train_task(MlpModel& model, const ExampleSource& source, const RegimeConfig& config,
                             std::size_t task_index, std::uint64_t seed, TrainingPlugin* plugin = nullptr);

}  // namespace driftlab
