#include "driftlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "driftlab/error.hpp"

namespace driftlab {

AccuracyMatrix::AccuracyMatrix(std::size_t tasks) : tasks_(tasks), entries_(tasks * tasks) {}

void AccuracyMatrix::set(std::size_t t, std::size_t i, double accuracy) {
  if (t >= tasks_ || i > t) {
    throw DomainError("accuracy entry (" + std::to_string(t) + ", " + std::to_string(i) + ") outside the lower triangle");
  }
  if (!(accuracy >= 0.0 && accuracy <= 1.0)) throw DomainError("accuracy must lie in [0, 1]");
  entries_[t * tasks_ + i] = accuracy;
}

std::optional<double> AccuracyMatrix::at(std::size_t t, std::size_t i) const {
  if (t >= tasks_ || i > t) return std::nullopt;
  return entries_[t * tasks_ + i];
}

double AccuracyMatrix::value(std::size_t t, std::size_t i) const {
  const auto v = at(t, i);
  if (!v) throw DomainError("missing accuracy entry (" + std::to_string(t) + ", " + std::to_string(i) + ")");
  return *v;
}

bool AccuracyMatrix::row_complete(std::size_t t) const {
  if (t >= tasks_) return false;
  for (std::size_t i = 0; i <= t; ++i) {
    if (!entries_[t * tasks_ + i]) return false;
  }
  return true;
}

double forgetting_f1(double l1_at_w2, double l1_at_w1) { return l1_at_w2 - l1_at_w1; }

double forgetting_bound(double lambda1_max, double delta_w_norm) {
  if (delta_w_norm < 0.0) throw DomainError("displacement norm must be non-negative");
  return 0.5 * std::max(lambda1_max, 0.0) * delta_w_norm * delta_w_norm;
}

double average_accuracy(const AccuracyMatrix& a, std::size_t t) {
  if (t < 1 || t > a.tasks()) throw DomainError("average_accuracy: t must lie in [1, T]");
  double sum = 0.0;
  for (std::size_t i = 0; i < t; ++i) sum += a.value(t - 1, i);
  return sum / static_cast<double>(t);
}

double average_forgetting(const AccuracyMatrix& a) {
  const std::size_t T = a.tasks();
  if (T < 2) throw DomainError("average forgetting is undefined for a single task");
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < T; ++i) {
    double peak = a.value(i, i);
    for (std::size_t t = i + 1; t + 1 < T; ++t) peak = std::max(peak, a.value(t, i));
    sum += peak - a.value(T - 1, i);
  }
  return sum / static_cast<double>(T - 1);
}

double delta_w_lower_bound(double c, double eps, double lambda2_max, ConvergenceCriterion criterion) {
  if (!(lambda2_max > 0.0)) throw DomainError("lambda2_max must be positive");
  if (c < 0.0) throw DomainError("C must be non-negative");
  if (!(eps > 0.0)) throw DomainError("eps must be positive");
  const double radius = criterion == ConvergenceCriterion::loss ? 2.0 * std::sqrt(eps) / lambda2_max : eps / lambda2_max;
  return std::max(0.0, c - radius);
}

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

namespace {

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

Correlation correlate(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DomainError("correlate: length mismatch");
  if (x.size() < 3) throw DomainError("correlate needs at least three records");
  Correlation c;
  c.pearson = pearson(x, y);
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  c.spearman = pearson(rx, ry);
  return c;
}

MeanStd mean_stddev(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  const double n = static_cast<double>(values.size());
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.stddev = std::sqrt(ss / (n - 1.0));
  }
  return out;
}

}  // namespace driftlab
