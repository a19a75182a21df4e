#include "driftlab/methods.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <memory>
#include <numeric>
#include <string>

#include "driftlab/error.hpp"
#include "driftlab/kernels.hpp"

namespace driftlab {

namespace {

constexpr std::size_t kFisherChunk = 256;

double elapsed_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Rows [0, n) in the order of a partial Fisher-Yates shuffle; the first k are a
// uniform sample without replacement.
std::vector<std::size_t> sample_rows(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  k = std::min(k, n);
  for (std::size_t i = 0; i < k; ++i) std::swap(rows[i], rows[i + rng.uniform_int(n - i)]);
  rows.resize(k);
  return rows;
}

int sample_class(std::span<const double> logits, Rng& rng) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  double u = rng.uniform() * z;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    u -= std::exp(logits[c] - mx);
    if (u < 0.0) return static_cast<int>(c);
  }
  return static_cast<int>(logits.size() - 1);
}

class EwcPlugin final : public TrainingPlugin {
 public:
  explicit EwcPlugin(const EwcState& state) : state_(state) {}
  void adjust_gradient(const MlpModel& model, std::span<double> grad, Dropout&) override {
    if (state_.initialized() && state_.lambda != 0.0) ewc_add_penalty_grad(state_, model.parameters(), grad);
  }

 private:
  const EwcState& state_;
};

class AgemPlugin final : public TrainingPlugin {
 public:
  AgemPlugin(const EpisodicMemory& memory, std::size_t ref_batch, Rng& rng)
      : memory_(memory), ref_batch_(ref_batch), rng_(rng) {}
  void adjust_gradient(const MlpModel& model, std::span<double> grad, Dropout&) override {
    if (memory_.empty() || ref_batch_ == 0) return;
    const Batch ref = memory_.sample(ref_batch_, rng_);
    ref_grad_.resize(grad.size());
    loss_and_grad(model, ref, Mode::eval, nullptr, ref_grad_);
    agem_project_inplace(grad, ref_grad_);
  }

 private:
  const EpisodicMemory& memory_;
  std::size_t ref_batch_;
  Rng& rng_;
  std::vector<double> ref_grad_;
};

class ReplayPlugin final : public TrainingPlugin {
 public:
  ReplayPlugin(EpisodicMemory& memory, std::size_t replay_batch, std::size_t task, Rng& rng)
      : memory_(memory), replay_batch_(replay_batch), task_(task), rng_(rng) {}
  bool extend_batch(const Batch& current, Batch& combined) override {
    if (memory_.empty() || replay_batch_ == 0) return false;
    combined = er_compose_batch(current, memory_, replay_batch_, rng_);
    return true;
  }
  void after_step(const Batch& current) override {
    const std::size_t dim = current.inputs.cols();
    for (std::size_t r = 0; r < current.size(); ++r) {
      const auto row = current.inputs.row(r);
      memory_.reservoir_offer({std::vector<double>(row.begin(), row.begin() + dim), current.labels[r], task_}, rng_);
    }
  }

 private:
  EpisodicMemory& memory_;
  std::size_t replay_batch_;
  std::size_t task_;
  Rng& rng_;
};

// A-GEM's per-task memory update: an equal share of the capacity, spread as
// evenly as possible over the classes present in the task.
void add_task_examples(EpisodicMemory& memory, const Task& task, std::size_t quota, Rng& rng,
                       const std::function<void(std::size_t)>& on_access) {
  if (quota == 0) return;
  const std::size_t n = task.size(Split::train);
  const std::vector<std::size_t> order = sample_rows(n, n, rng);
  const auto& labels = task.data->train.labels;
  const std::size_t classes = task.num_classes();
  const std::size_t per_class = std::max<std::size_t>(1, quota / classes);
  std::vector<std::size_t> taken(classes, 0);
  std::vector<std::size_t> chosen;
  for (std::size_t row : order) {
    if (chosen.size() == quota) break;
    auto& count = taken[static_cast<std::size_t>(labels[row])];
    if (count < per_class) {
      ++count;
      chosen.push_back(row);
    }
  }
  // Top up from any class when some classes are too small.
  for (std::size_t row : order) {
    if (chosen.size() >= quota) break;
    if (std::find(chosen.begin(), chosen.end(), row) == chosen.end()) chosen.push_back(row);
  }
  if (on_access) on_access(task.index);
  Batch batch;
  task.gather(Split::train, chosen, batch);
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const auto row = batch.inputs.row(r);
    memory.append({std::vector<double>(row.begin(), row.end()), batch.labels[r], task.index});
  }
}

}  // namespace

std::string_view to_string(MethodKind kind) {
  switch (kind) {
    case MethodKind::naive: return "naive";
    case MethodKind::stable: return "stable";
    case MethodKind::ewc: return "ewc";
    case MethodKind::agem: return "agem";
    case MethodKind::er: return "er";
    case MethodKind::multitask: return "multitask";
  }
  return "?";
}

std::size_t MethodConfig::resolved_capacity(std::size_t tasks, std::size_t classes) const {
  return memory_capacity ? *memory_capacity : tasks * classes;
}

void MethodConfig::validate(std::size_t tasks, std::size_t classes) const {
  regime.validate();
  if (kind == MethodKind::ewc && !(ewc_lambda >= 0.0 && std::isfinite(ewc_lambda))) {
    throw ConfigError(name + ": ewc_lambda must be non-negative");
  }
  if (uses_memory()) {
    const std::size_t cap = resolved_capacity(tasks, classes);
    // Capacity 0 turns the memory off; anything in between cannot hold one example per class.
    if (cap != 0 && cap < classes) {
      throw ConfigError(name + ": memory capacity " + std::to_string(cap) + " is below the " +
                        std::to_string(classes) + " classes of a task");
    }
  }
}

MethodConfig method_from_name(std::string_view name) {
  MethodConfig m;
  m.name = std::string(name);
  std::string_view base = name;
  if (name.starts_with("stable-")) {
    base = name.substr(7);
    m.stabilized = true;
  }
  if (base == "naive" && !m.stabilized) {
    m.kind = MethodKind::naive;
    m.regime = preset_regime("plastic-exp2");
    return m;
  }
  if (base == "stable" && !m.stabilized) {
    m.kind = MethodKind::stable;
    m.regime = preset_regime("stable-exp2");
    return m;
  }
  if (base == "multitask" && !m.stabilized) {
    m.kind = MethodKind::multitask;
    m.regime = preset_regime("baseline-exp2");
    return m;
  }
  if (base == "ewc") {
    m.kind = MethodKind::ewc;
  } else if (base == "agem") {
    m.kind = MethodKind::agem;
  } else if (base == "er") {
    m.kind = MethodKind::er;
  } else {
    throw ConfigError("unknown method '" + std::string(name) +
                      "' (expected naive, stable, ewc, agem, er, multitask or stable-{ewc,agem,er})");
  }
  m.regime = preset_regime("baseline-exp2");
  if (m.stabilized) m.regime = stabilize(m.regime);
  return m;
}

PenaltyGrad ewc_penalty_and_grad(const EwcState& state, const ParamVector& w) {
  PenaltyGrad out{0.0, ParamVector(w.size())};
  out.penalty = ewc_add_penalty_grad(state, w.span(), out.grad.span());
  return out;
}

double ewc_add_penalty_grad(const EwcState& state, std::span<const double> w, std::span<double> grad) {
  if (state.anchor.size() != w.size() || state.fisher_diag.size() != w.size() || grad.size() != w.size()) {
    throw ConfigError("EWC state does not match the parameter count");
  }
  double penalty = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double d = w[i] - state.anchor[i];
    const double fd = state.fisher_diag[i] * d;
    penalty += fd * d;
    grad[i] += state.lambda * fd;
  }
  return 0.5 * state.lambda * penalty;
}

void ewc_update_fisher(EwcState& state, const MlpModel& model, const Task& task, std::size_t sample_count,
                       std::uint64_t seed, bool empirical) {
  const std::size_t n = task.size(Split::train);
  if (sample_count > n) {
    std::cerr << "warning: fisher_samples " << sample_count << " exceeds the " << n
              << " training examples of task " << task.index << "; using all of them\n";
    sample_count = n;
  }
  const std::size_t d = model.parameter_count();
  if (state.fisher_diag.size() != d) state.fisher_diag = ParamVector(d);
  if (sample_count > 0) {
    Rng rng(mix_seed(mix_seed(seed, "fisher"), task.index));
    const std::vector<std::size_t> rows = sample_rows(n, sample_count, rng);
    std::vector<double> sums(d, 0.0);
    Batch batch;
    std::vector<int> labels;
    for (std::size_t begin = 0; begin < rows.size(); begin += kFisherChunk) {
      const std::size_t end = std::min(rows.size(), begin + kFisherChunk);
      task.gather(Split::train, std::span<const std::size_t>(rows).subspan(begin, end - begin), batch);
      labels = batch.labels;
      if (!empirical) {
        const Matrix logits = forward(model, batch.inputs, Mode::eval).logits;
        for (std::size_t r = 0; r < logits.rows(); ++r) labels[r] = sample_class(logits.row(r), rng);
      }
      accumulate_squared_scores(model, batch.inputs, labels, sums);
    }
    const double inv = 1.0 / static_cast<double>(rows.size());
    for (std::size_t i = 0; i < d; ++i) state.fisher_diag[i] += sums[i] * inv;
  }
  state.anchor = model.pack();
  ++state.tasks_absorbed;
}

ParamVector agem_project(const ParamVector& g, const ParamVector& g_ref) {
  ParamVector out = g;
  agem_project_inplace(out.span(), g_ref.span());
  return out;
}

void agem_project_inplace(std::span<double> g, std::span<const double> g_ref) {
  if (g.size() != g_ref.size()) throw ConfigError("agem_project: gradient lengths differ");
  const double ref_sq = kernels::dot(g_ref, g_ref);
  if (ref_sq == 0.0) return;
  const double overlap = kernels::dot(g, g_ref);
  if (overlap >= 0.0) return;
  kernels::axpy(-overlap / ref_sq, g_ref, g);
}

void EpisodicMemory::reservoir_offer(MemoryEntry entry, Rng& rng) {
  if (entries_.size() < capacity_) {
    entries_.push_back(std::move(entry));
  } else if (capacity_ > 0) {
    const std::uint64_t j = rng.uniform_int(seen_ + 1);
    if (j < capacity_) entries_[j] = std::move(entry);
  }
  ++seen_;
}

bool EpisodicMemory::append(MemoryEntry entry) {
  ++seen_;
  if (entries_.size() >= capacity_) return false;
  entries_.push_back(std::move(entry));
  return true;
}

Batch EpisodicMemory::sample(std::size_t n, Rng& rng) const {
  Batch out;
  if (entries_.empty() || n == 0) return out;
  const std::vector<std::size_t> rows = sample_rows(entries_.size(), n, rng);
  const std::size_t dim = entries_.front().input.size();
  out.inputs.assign_zero(rows.size(), dim);
  out.labels.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const MemoryEntry& e = entries_[rows[i]];
    std::copy(e.input.begin(), e.input.end(), out.inputs.row(i).begin());
    out.labels[i] = e.label;
  }
  return out;
}

Batch er_compose_batch(const Batch& current, const EpisodicMemory& memory, std::size_t replay_batch_size, Rng& rng) {
  const Batch replay = memory.sample(replay_batch_size, rng);
  if (replay.size() == 0) return current;
  const std::size_t dim = current.inputs.cols();
  if (replay.inputs.cols() != dim) throw ConfigError("replay examples do not match the input size");
  Batch out;
  out.inputs.assign_zero(current.size() + replay.size(), dim);
  std::copy(current.inputs.data(), current.inputs.data() + current.inputs.size(), out.inputs.data());
  std::copy(replay.inputs.data(), replay.inputs.data() + replay.inputs.size(),
            out.inputs.data() + current.inputs.size());
  out.labels = current.labels;
  out.labels.insert(out.labels.end(), replay.labels.begin(), replay.labels.end());
  return out;
}

StepResult er_train_step(MlpModel& model, const Batch& current, EpisodicMemory& memory, std::size_t replay_batch_size,
                         double lr, double weight_decay, Dropout& dropout, Rng& rng, std::size_t current_task) {
  StepResult out;
  std::vector<double> grad(model.parameter_count());
  if (memory.empty() || replay_batch_size == 0) {
    out.loss = loss_and_grad(model, current, Mode::train, &dropout, grad);
  } else {
    const Batch combined = er_compose_batch(current, memory, replay_batch_size, rng);
    out.replayed = combined.size() - current.size();
    out.loss = loss_and_grad(model, combined, Mode::train, &dropout, grad);
  }
  out.step_norm = sgd_step(model, grad, lr, weight_decay);
  ReplayPlugin offer(memory, replay_batch_size, current_task, rng);
  offer.after_step(current);
  return out;
}

double evaluate_accuracy(const MlpModel& model, const Task& task, std::size_t chunk) {
  const std::size_t n = task.size(Split::val);
  if (n == 0) throw ConfigError("task " + std::to_string(task.index) + " has no validation data");
  chunk = std::max<std::size_t>(chunk, 1);
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const Batch batch = task.slice(Split::val, begin, std::min(chunk, n - begin));
    correct += count_correct(forward(model, batch.inputs, Mode::eval).logits, batch.labels);
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

double evaluate_loss(const MlpModel& model, const Task& task, Split split, std::size_t chunk) {
  const std::size_t n = task.size(split);
  if (n == 0) throw ConfigError("task " + std::to_string(task.index) + " has no examples in the split");
  chunk = std::max<std::size_t>(chunk, 1);
  double total = 0.0;
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t count = std::min(chunk, n - begin);
    const Batch batch = task.slice(split, begin, count);
    total += loss(model, batch) * static_cast<double>(count);
  }
  return total / static_cast<double>(n);
}

RunRecord run_continual(const MethodConfig& method, const TaskStream& stream, std::uint64_t seed,
                        const RunOptions& options) {
  if (method.kind == MethodKind::multitask) return run_multitask(stream, method.regime, seed, options);
  const std::size_t T = stream.size();
  if (T == 0) throw ConfigError("task stream is empty");
  method.validate(T, stream.num_classes());

  const auto start = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.method = method.name.empty() ? std::string(to_string(method.kind)) : method.name;
  rec.seed = seed;
  rec.accuracy = AccuracyMatrix(T);

  std::vector<std::size_t> sizes{stream.input_size()};
  sizes.insert(sizes.end(), options.hidden.begin(), options.hidden.end());
  sizes.push_back(stream.num_classes());
  MlpModel model = MlpModel::initialized(sizes, mix_seed(seed, "init"));
  ParamVector previous = model.pack();

  EwcState ewc;
  ewc.lambda = method.ewc_lambda;
  const std::size_t capacity = method.uses_memory() ? method.resolved_capacity(T, stream.num_classes()) : 0;
  EpisodicMemory memory(capacity);
  Rng memory_rng(mix_seed(seed, "memory"));

  for (std::size_t t = 0; t < T; ++t) {
    const Task& task = stream.tasks[t];
    TaskTrainSource source(task, options.on_train_access);
    std::unique_ptr<TrainingPlugin> plugin;
    switch (method.kind) {
      case MethodKind::ewc: plugin = std::make_unique<EwcPlugin>(ewc); break;
      case MethodKind::agem:
        plugin = std::make_unique<AgemPlugin>(memory, method.agem_ref_batch, memory_rng);
        break;
      case MethodKind::er:
        plugin = std::make_unique<ReplayPlugin>(memory, method.replay_batch, t, memory_rng);
        break;
      default: break;
    }
    try {
      const TrainedCheckpoint ck = train_task(model, source, method.regime, t, seed, plugin.get());
      rec.train_losses.push_back(ck.final_train_loss);
      rec.exit_grad_norms.push_back(ck.exit_grad_norm);
    } catch (const NumericalError& e) {
      rec.failed = true;
      rec.failure = "task " + std::to_string(t) + ": " + e.what();
      break;
    }

    if (method.kind == MethodKind::ewc && method.ewc_lambda != 0.0) {
      if (options.on_train_access) options.on_train_access(t);
      ewc_update_fisher(ewc, model, task, method.fisher_samples, seed, method.fisher_empirical);
    }
    if (method.kind == MethodKind::agem) {
      const std::size_t quota = capacity / T;
      add_task_examples(memory, task, quota, memory_rng, options.on_train_access);
    }

    ParamVector current = model.pack();
    rec.delta_w.push_back(norm(difference(previous, current)));
    rec.param_norms.push_back(norm(current));
    for (std::size_t i = 0; i <= t; ++i) {
      rec.accuracy.set(t, i, evaluate_accuracy(model, stream.tasks[i], options.eval_chunk));
    }
    if (options.on_task_end) options.on_task_end(t, model);
    if (options.keep_checkpoints) rec.checkpoints.push_back(current);
    previous = std::move(current);
    rec.tasks_completed = t + 1;
  }
  rec.wallclock_s = elapsed_since(start);
  return rec;
}

namespace {

// Concatenated training splits of every task; row r belongs to the task
// whose prefix range contains it.
class MixtureSource final : public ExampleSource {
 public:
  MixtureSource(const TaskStream& stream, std::function<void(std::size_t)> on_access)
      : stream_(stream), on_access_(std::move(on_access)) {
    offsets_.push_back(0);
    for (const Task& t : stream.tasks) offsets_.push_back(offsets_.back() + t.size(Split::train));
  }
  std::size_t size() const override { return offsets_.back(); }
  void gather(std::span<const std::size_t> rows, Batch& out) const override {
    const std::size_t dim = stream_.input_size();
    out.inputs.assign_zero(rows.size(), dim);
    out.labels.resize(rows.size());
    Batch one;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), rows[i]);
      const std::size_t task = static_cast<std::size_t>(it - offsets_.begin()) - 1;
      if (on_access_) on_access_(task);
      const std::size_t local = rows[i] - offsets_[task];
      stream_.tasks[task].gather(Split::train, std::span<const std::size_t>(&local, 1), one);
      std::copy(one.inputs.data(), one.inputs.data() + dim, out.inputs.row(i).begin());
      out.labels[i] = one.labels[0];
    }
  }

 private:
  const TaskStream& stream_;
  std::function<void(std::size_t)> on_access_;
  std::vector<std::size_t> offsets_;
};

}  // namespace

RunRecord run_multitask(const TaskStream& stream, const RegimeConfig& regime, std::uint64_t seed,
                        const RunOptions& options) {
  const std::size_t T = stream.size();
  if (T == 0) throw ConfigError("task stream is empty");
  regime.validate();
  const auto start = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.method = "multitask";
  rec.seed = seed;
  rec.joint = true;
  rec.accuracy = AccuracyMatrix(T);

  std::vector<std::size_t> sizes{stream.input_size()};
  sizes.insert(sizes.end(), options.hidden.begin(), options.hidden.end());
  sizes.push_back(stream.num_classes());
  MlpModel model = MlpModel::initialized(sizes, mix_seed(seed, "init"));
  const ParamVector initial = model.pack();

  // A single-task stream trains exactly like the naive protocol on that task.
  std::unique_ptr<ExampleSource> source;
  if (T == 1) {
    source = std::make_unique<TaskTrainSource>(stream.tasks[0], options.on_train_access);
  } else {
    source = std::make_unique<MixtureSource>(stream, options.on_train_access);
  }
  try {
    const TrainedCheckpoint ck = train_task(model, *source, regime, 0, seed);
    rec.train_losses.push_back(ck.final_train_loss);
    rec.exit_grad_norms.push_back(ck.exit_grad_norm);
  } catch (const NumericalError& e) {
    rec.failed = true;
    rec.failure = e.what();
    rec.wallclock_s = elapsed_since(start);
    return rec;
  }
  const ParamVector final_params = model.pack();
  rec.delta_w.push_back(norm(difference(initial, final_params)));
  rec.param_norms.push_back(norm(final_params));
  for (std::size_t i = 0; i < T; ++i) {
    rec.accuracy.set(T - 1, i, evaluate_accuracy(model, stream.tasks[i], options.eval_chunk));
  }
  if (options.on_task_end) options.on_task_end(T - 1, model);
  if (options.keep_checkpoints) rec.checkpoints.push_back(final_params);
  rec.tasks_completed = T;
  rec.wallclock_s = elapsed_since(start);
  return rec;
}

RunSummary summarize(const RunRecord& record) {
  RunSummary s;
  const std::size_t T = record.accuracy.tasks();
  if (record.tasks_completed == 0 || T == 0) return s;
  const std::size_t last = record.joint ? T : record.tasks_completed;
  s.avg_accuracy = average_accuracy(record.accuracy, last);
  s.task1_final_accuracy = record.accuracy.value(last - 1, 0);
  if (record.joint) {
    if (T >= 2) s.avg_forgetting = 0.0;
  } else if (record.tasks_completed == T && T >= 2) {
    s.avg_forgetting = average_forgetting(record.accuracy);
  }
  return s;
}

}  // namespace driftlab
