#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace driftlab {

/// a(t, i): validation accuracy in [0, 1] on task i after training task t.
/// Indices are 0-based; only entries with i <= t exist.
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  explicit AccuracyMatrix(std::size_t tasks);

  std::size_t tasks() const { return tasks_; }
  void set(std::size_t t, std::size_t i, double accuracy);
  std::optional<double> at(std::size_t t, std::size_t i) const;
  /// Throws DomainError when the entry has not been recorded.
  double value(std::size_t t, std::size_t i) const;
  bool row_complete(std::size_t t) const;

 private:
  std::size_t tasks_ = 0;
  std::vector<std::optional<double>> entries_;  // row-major T x T, upper part unused
};

/// L₁(ŵ₂) − L₁(ŵ₁). Negative values (backward transfer) are allowed.
double forgetting_f1(double l1_at_w2, double l1_at_w1);

/// ½·max(λ₁,0)·‖Δw‖².
double forgetting_bound(double lambda1_max, double delta_w_norm);

/// Mean of row t-1, i.e. the accuracy over the first t tasks after training
/// the t-th (1 <= t <= T).
double average_accuracy(const AccuracyMatrix& a, std::size_t t);

/// (1/(T−1)) Σ_{i<T−1} [max_{i<=t<T−1} a(t,i) − a(T−1,i)] (0-based). Throws
/// DomainError for T < 2.
double average_forgetting(const AccuracyMatrix& a);

enum class ConvergenceCriterion { loss, gradnorm };

/// Lower bound on ‖Δw‖ when task 2 stops inside an ε-neighbourhood of its
/// optimum: C − 2√ε/λ₂ (loss criterion) or C − ε/λ₂ (gradient-norm
/// criterion), floored at 0.
double delta_w_lower_bound(double c, double eps, double lambda2_max, ConvergenceCriterion criterion);

struct Correlation {
  std::optional<double> pearson;   // absent when a coordinate has zero variance
  std::optional<double> spearman;
};

/// Needs at least three points.
Correlation correlate(std::span<const double> x, std::span<const double> y);

/// 1-based ranks, ties share their average rank.
std::vector<double> average_ranks(std::span<const double> values);

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // sample (n-1) standard deviation, 0 for n < 2
};

MeanStd mean_stddev(std::span<const double> values);

}  // namespace driftlab
