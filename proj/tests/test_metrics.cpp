#include <cmath>
#include <vector>

#include "doctest.h"
#include "driftlab/error.hpp"
#include "driftlab/metrics.hpp"
#include "driftlab/rng.hpp"
#include "driftlab/verify.hpp"

using namespace driftlab;

namespace {

AccuracyMatrix three_task_fixture() {
  AccuracyMatrix a(3);
  a.set(0, 0, 0.9);
  a.set(1, 0, 0.8);
  a.set(1, 1, 0.95);
  a.set(2, 0, 0.7);
  a.set(2, 1, 0.85);
  a.set(2, 2, 0.9);
  return a;
}

AccuracyMatrix random_matrix(std::size_t tasks, Rng& rng, double lo, double hi) {
  AccuracyMatrix a(tasks);
  for (std::size_t t = 0; t < tasks; ++t) {
    for (std::size_t i = 0; i <= t; ++i) a.set(t, i, lo + (hi - lo) * rng.uniform());
  }
  return a;
}

// Straight from the definition with 1-based indices.
double forgetting_by_definition(const AccuracyMatrix& a) {
  const std::size_t T = a.tasks();
  double sum = 0.0;
  for (std::size_t i = 1; i <= T - 1; ++i) {
    double best = -1.0;
    for (std::size_t t = i; t <= T - 1; ++t) best = std::max(best, *a.at(t - 1, i - 1));
    sum += best - *a.at(T - 1, i - 1);
  }
  return sum / static_cast<double>(T - 1);
}

double pearson_textbook(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

}  // namespace

TEST_CASE("average accuracy on the three-task fixture") {
  const AccuracyMatrix a = three_task_fixture();
  CHECK(average_accuracy(a, 3) == doctest::Approx(0.816666666667).epsilon(1e-10));
  CHECK(average_accuracy(a, 1) == 0.9);
  CHECK(average_accuracy(a, 2) == doctest::Approx(0.875));
  CHECK_THROWS_AS(average_accuracy(a, 0), DomainError);
  CHECK_THROWS_AS(average_accuracy(a, 4), DomainError);

  AccuracyMatrix ones(4);
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t i = 0; i <= t; ++i) ones.set(t, i, 1.0);
  }
  for (std::size_t t = 1; t <= 4; ++t) CHECK(average_accuracy(ones, t) == 1.0);
  CHECK(average_forgetting(ones) == 0.0);
}

TEST_CASE("average forgetting on the three-task fixture") {
  CHECK(average_forgetting(three_task_fixture()) == doctest::Approx(0.15).epsilon(1e-12));
}

TEST_CASE("average forgetting matches the definition on random matrices") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const AccuracyMatrix a = random_matrix(2 + trial % 7, rng, 0.0, 1.0);
    CHECK(average_forgetting(a) == doctest::Approx(forgetting_by_definition(a)).epsilon(1e-14));
  }
}

TEST_CASE("monotone accuracies give no forgetting") {
  AccuracyMatrix a(4);
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t i = 0; i <= t; ++i) a.set(t, i, 0.5 + 0.1 * static_cast<double>(t) + 0.01 * static_cast<double>(i));
  }
  CHECK(average_forgetting(a) <= 0.0);
}

TEST_CASE("average forgetting is invariant to a constant shift") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t T = 2 + trial % 5;
    const AccuracyMatrix a = random_matrix(T, rng, 0.0, 0.7);
    const double shift = 0.3 * rng.uniform();
    AccuracyMatrix b(T);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t i = 0; i <= t; ++i) b.set(t, i, a.value(t, i) + shift);
    }
    CHECK(average_forgetting(b) == doctest::Approx(average_forgetting(a)).epsilon(1e-12));
  }
}

TEST_CASE("accuracy matrix errors") {
  AccuracyMatrix a(3);
  CHECK_THROWS_AS(a.set(0, 1, 0.5), DomainError);
  CHECK_THROWS_AS(a.set(3, 0, 0.5), DomainError);
  CHECK_THROWS_AS(a.set(1, 0, 1.5), DomainError);
  CHECK_THROWS_AS(a.set(1, 0, std::nan("")), DomainError);
  CHECK_FALSE(a.at(1, 0).has_value());
  CHECK_THROWS_AS(a.value(1, 0), DomainError);
  CHECK_THROWS_AS(average_forgetting(a), DomainError);
  a.set(1, 0, 0.4);
  CHECK_FALSE(a.row_complete(1));
  a.set(1, 1, 0.6);
  CHECK(a.row_complete(1));

  AccuracyMatrix single(1);
  single.set(0, 0, 0.9);
  CHECK_THROWS_AS(average_forgetting(single), DomainError);
}

TEST_CASE("forgetting F1 and its bound") {
  CHECK(forgetting_f1(0.7, 0.7) == 0.0);
  CHECK(forgetting_f1(2.5, 0.4) == doctest::Approx(2.1));
  CHECK(forgetting_f1(0.1, 0.4) < 0.0);

  CHECK(forgetting_bound(0.0, 5.0) == 0.0);
  CHECK(forgetting_bound(-3.0, 5.0) == 0.0);
  CHECK(forgetting_bound(2.19, 73.1) == doctest::Approx(5851.3).epsilon(1e-5));
  CHECK_THROWS_AS(forgetting_bound(1.0, -1.0), DomainError);

  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const double lambda = 10.0 * rng.uniform();
    const double d = 100.0 * rng.uniform();
    const double c = 0.1 + 5.0 * rng.uniform();
    CHECK(forgetting_bound(lambda, c * d) == doctest::Approx(c * c * forgetting_bound(lambda, d)).epsilon(1e-12));
  }
}

TEST_CASE("F1 equals the bound on one-dimensional quadratics") {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const double lambda = 0.01 + 20.0 * rng.uniform();
    const double w1 = 3.0 * rng.normal();
    const double w2 = w1 + 10.0 * rng.normal();
    const auto l1 = [&](double w) { return 0.5 * lambda * (w - w1) * (w - w1) + 0.25; };
    const double f1 = forgetting_f1(l1(w2), l1(w1));
    const double bound = forgetting_bound(lambda, std::abs(w2 - w1));
    CHECK(std::abs(f1 - bound) <= 1e-10 * bound);
    CHECK(f1 <= bound * (1.0 + 1e-12));
  }
}

TEST_CASE("displacement lower bounds") {
  CHECK(delta_w_lower_bound(10.0, 1.0, 2.0, ConvergenceCriterion::loss) == doctest::Approx(9.0));
  CHECK(delta_w_lower_bound(10.0, 1.0, 2.0, ConvergenceCriterion::gradnorm) == doctest::Approx(9.5));
  CHECK(delta_w_lower_bound(0.0, 1.0, 2.0, ConvergenceCriterion::loss) == 0.0);
  CHECK(delta_w_lower_bound(0.0, 1.0, 2.0, ConvergenceCriterion::gradnorm) == 0.0);
  CHECK(delta_w_lower_bound(10.0, 1.0, 1e12, ConvergenceCriterion::loss) == doctest::Approx(10.0));
  CHECK(delta_w_lower_bound(10.0, 1.0, 1e12, ConvergenceCriterion::gradnorm) == doctest::Approx(10.0));
  CHECK_THROWS_AS(delta_w_lower_bound(10.0, 1.0, 0.0, ConvergenceCriterion::loss), DomainError);
  CHECK_THROWS_AS(delta_w_lower_bound(10.0, 1.0, -1.0, ConvergenceCriterion::gradnorm), DomainError);
  CHECK_THROWS_AS(delta_w_lower_bound(-1.0, 1.0, 1.0, ConvergenceCriterion::loss), DomainError);
  CHECK_THROWS_AS(delta_w_lower_bound(1.0, 0.0, 1.0, ConvergenceCriterion::loss), DomainError);

  double previous = 0.0;
  for (double lambda : {0.5, 1.0, 2.0, 4.0, 8.0}) {
    const double b = delta_w_lower_bound(3.0, 0.5, lambda, ConvergenceCriterion::gradnorm);
    CHECK(b >= previous);
    previous = b;
  }
}

TEST_CASE("displacement lower bounds against gradient-descent trajectories") {
  const QuadraticSandboxCheck q = quadratic_sandbox_check();
  CHECK(q.max_f1_error <= 1e-10);
  CHECK(q.f1_within_bound);
  CHECK(q.trajectories > 100);
  CHECK(q.gradnorm_violations == 0);
  CHECK(q.loss_violations == 0);
  // ½λd² <= ε only gives d <= √(2ε/λ), which exceeds 2√ε/λ once λ > 2.
  CHECK(q.loss_violations_steep > 0);
}

TEST_CASE("correlation") {
  const std::vector<double> x = {1.0, 2.0, 3.0, 4.0, 5.0};
  const std::vector<double> linear = {3.0, 5.0, 7.0, 9.0, 11.0};
  const Correlation lin = correlate(x, linear);
  CHECK(*lin.pearson == doctest::Approx(1.0));
  CHECK(*lin.spearman == doctest::Approx(1.0));

  std::vector<double> grown;
  for (double v : linear) grown.push_back(std::exp(v));
  const Correlation mono = correlate(x, grown);
  CHECK(*mono.spearman == doctest::Approx(1.0));
  CHECK(*mono.pearson < 1.0);

  const std::vector<double> a = {1.0, 2.0, 3.0};
  const std::vector<double> b = {2.0, 1.0, 3.0};
  CHECK(*correlate(a, b).spearman == doctest::Approx(0.5));

  const std::vector<double> flat = {4.0, 4.0, 4.0};
  const Correlation undefined = correlate(a, flat);
  CHECK_FALSE(undefined.pearson.has_value());
  CHECK_FALSE(undefined.spearman.has_value());

  const std::vector<double> two = {1.0, 2.0};
  CHECK_THROWS_AS(correlate(two, two), DomainError);
  CHECK_THROWS_AS(correlate(a, two), DomainError);
}

TEST_CASE("correlation against the textbook formula and rank invariance") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x, y;
    for (int i = 0; i < 15; ++i) {
      x.push_back(rng.normal());
      y.push_back(x.back() + rng.normal());
    }
    const Correlation c = correlate(x, y);
    CHECK(*c.pearson == doctest::Approx(pearson_textbook(x, y)).epsilon(1e-10));
    std::vector<double> tx;
    for (double v : x) tx.push_back(std::exp(3.0 * v) + 7.0);
    CHECK(*correlate(tx, y).spearman == doctest::Approx(*c.spearman).epsilon(1e-12));
  }
}

TEST_CASE("average ranks share ties") {
  const std::vector<double> v = {10.0, 20.0, 10.0, 30.0, 20.0, 20.0};
  const std::vector<double> r = average_ranks(v);
  const std::vector<double> expected = {1.5, 4.0, 1.5, 6.0, 4.0, 4.0};
  CHECK(r == expected);
  CHECK(average_ranks(std::vector<double>{}).empty());
}

TEST_CASE("mean and sample standard deviation") {
  const std::vector<double> v = {80.0, 80.2, 80.1, 79.9, 80.3};
  const MeanStd m = mean_stddev(v);
  CHECK(m.mean == doctest::Approx(80.1).epsilon(1e-12));
  CHECK(m.stddev == doctest::Approx(std::sqrt(0.1 / 4.0)).epsilon(1e-9));
  CHECK(m.stddev == doctest::Approx(0.158).epsilon(1e-3));

  const MeanStd one = mean_stddev(std::vector<double>{3.0});
  CHECK(one.mean == 3.0);
  CHECK(one.stddev == 0.0);
}
