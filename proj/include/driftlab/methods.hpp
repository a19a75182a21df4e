#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "driftlab/metrics.hpp"
#include "driftlab/mlp.hpp"
#include "driftlab/optim.hpp"
#include "driftlab/rng.hpp"
#include "driftlab/tasks.hpp"

namespace driftlab {

enum class MethodKind { naive, stable, ewc, agem, er, multitask };

std::string_view to_string(MethodKind kind);

struct MethodConfig {
  std::string name;  // report label, e.g. "stable-ewc"
  MethodKind kind = MethodKind::naive;
  RegimeConfig regime;
  bool stabilized = false;  // regime already passed through stabilize()

  double ewc_lambda = 10.0;
  std::size_t fisher_samples = 1024;
  bool fisher_empirical = false;  // true: observed labels instead of model-sampled ones

  std::optional<std::size_t> memory_capacity;  // unset: one example per class per task
  std::size_t replay_batch = 10;
  std::size_t agem_ref_batch = 256;

  bool uses_memory() const { return kind == MethodKind::agem || kind == MethodKind::er; }
  /// Capacity for a stream of `tasks` tasks with `classes` classes each.
  std::size_t resolved_capacity(std::size_t tasks, std::size_t classes) const;
  void validate(std::size_t tasks, std::size_t classes) const;
};

/// naive, stable, ewc, agem, er, multitask and stable-{ewc,agem,er}, each
/// with its default regime (plastic-exp2, stable-exp2, baseline-exp2, or the
/// stabilized baseline).
MethodConfig method_from_name(std::string_view name);

// ---------------------------------------------------------------- EWC

struct EwcState {
  ParamVector anchor;
  ParamVector fisher_diag;
  double lambda = 0.0;
  std::size_t tasks_absorbed = 0;

  bool initialized() const { return tasks_absorbed > 0; }
};

struct PenaltyGrad {
  double penalty = 0.0;
  ParamVector grad;
};

/// (λ/2)·Σ F_i (w_i − anchor_i)² and its gradient λ·F⊙(w − anchor).
PenaltyGrad ewc_penalty_and_grad(const EwcState& state, const ParamVector& w);
/// Adds λ·F⊙(w − anchor) to `grad`; returns the penalty.
double ewc_add_penalty_grad(const EwcState& state, std::span<const double> w, std::span<double> grad);

/// Adds this task's diagonal Fisher (mean squared score over `sample_count`
/// training examples, labels drawn from the model's softmax unless
/// `empirical`) to the running sum and moves the anchor to the current
/// parameters. sample_count is clamped to the task size with a warning.
void ewc_update_fisher(EwcState& state, const MlpModel& model, const Task& task, std::size_t sample_count,
                       std::uint64_t seed, bool empirical = false);

// ---------------------------------------------------------------- A-GEM

/// Projects g so that it no longer conflicts with g_ref:
/// g − (g·g_ref / g_ref·g_ref)·g_ref when g·g_ref < 0, else g. A zero g_ref
/// leaves g unchanged.
ParamVector agem_project(const ParamVector& g, const ParamVector& g_ref);
void agem_project_inplace(std::span<double> g, std::span<const double> g_ref);

// ---------------------------------------------------------------- memory

struct MemoryEntry {
  std::vector<double> input;
  int label = 0;
  std::size_t task_id = 0;
};

/// Bounded store of past examples.
class EpisodicMemory {
 public:
  explicit EpisodicMemory(std::size_t capacity) : capacity_(capacity) {}

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t seen_count() const { return seen_; }
  const std::vector<MemoryEntry>& entries() const { return entries_; }

  /// Reservoir sampling (Algorithm R): append while below capacity, else
  /// replace slot j = uniform_int(seen + 1) when j < capacity.
  void reservoir_offer(MemoryEntry entry, Rng& rng);
  /// Appends unless full; returns whether the entry was stored.
  bool append(MemoryEntry entry);

  /// Uniform sample without replacement of min(n, size()) entries.
  Batch sample(std::size_t n, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t seen_ = 0;
  std::vector<MemoryEntry> entries_;
};

/// current followed by min(replay_batch_size, |memory|) replayed examples.
Batch er_compose_batch(const Batch& current, const EpisodicMemory& memory, std::size_t replay_batch_size, Rng& rng);

struct StepResult {
  double loss = 0.0;
  std::size_t replayed = 0;
  double step_norm = 0.0;
};

/// One ER-Reservoir step: gradient on current ∪ replay, SGD update, then
/// every current example is offered to the reservoir.
StepResult er_train_step(MlpModel& model, const Batch& current, EpisodicMemory& memory, std::size_t replay_batch_size,
                         double lr, double weight_decay, Dropout& dropout, Rng& rng, std::size_t current_task = 0);

// ---------------------------------------------------------------- runs

struct RunOptions {
  std::vector<std::size_t> hidden = {256, 256};
  std::size_t eval_chunk = 1000;
  bool keep_checkpoints = true;
  /// Called with the task index whenever training data of a task is read
  /// (mini-batches and Fisher samples). Used by tests to audit data access.
  std::function<void(std::size_t)> on_train_access;
  /// Called after each task with its index and the trained model.
  std::function<void(std::size_t, const MlpModel&)> on_task_end;
};

struct RunRecord {
  std::string method;
  std::uint64_t seed = 0;
  bool joint = false;  // multi-task run: only the last accuracy row exists, forgetting is 0
  AccuracyMatrix accuracy;
  std::vector<ParamVector> checkpoints;   // parameters after each task
  std::vector<double> delta_w;            // ‖w_t − w_{t−1}‖ (task 0: from the initialisation)
  std::vector<double> param_norms;        // ‖w_t‖
  std::vector<double> train_losses;       // final epoch mean loss per task
  std::vector<double> exit_grad_norms;
  double wallclock_s = 0.0;
  bool failed = false;
  std::string failure;
  std::size_t tasks_completed = 0;
};

/// Trains the stream's tasks in order, recording a(t, i) for i <= t after
/// each task. Numerical failures end the run early with `failed` set.
RunRecord run_continual(const MethodConfig& method, const TaskStream& stream, std::uint64_t seed,
                        const RunOptions& options = {});

/// One model on the uniform mixture of every task's training set, for
/// epochs_per_task passes over the mixture (the sum of the sequential
/// budgets).
RunRecord run_multitask(const TaskStream& stream, const RegimeConfig& regime, std::uint64_t seed,
                        const RunOptions& options = {});

/// Validation accuracy of `model` on a task.
double evaluate_accuracy(const MlpModel& model, const Task& task, std::size_t chunk = 1000);
/// Evaluation-mode mean loss on a split.
double evaluate_loss(const MlpModel& model, const Task& task, Split split, std::size_t chunk = 1000);

struct RunSummary {
  double avg_accuracy = 0.0;               // A_T in [0, 1]
  std::optional<double> avg_forgetting;    // absent for T = 1
  double task1_final_accuracy = 0.0;
};

RunSummary summarize(const RunRecord& record);

}  // namespace driftlab
