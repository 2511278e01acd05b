#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace gdec::stats {

double accuracy(std::span<const int> predictions, std::span<const int> labels);

enum class Sided { two, greater, less };
std::string to_string(Sided s);
Sided sided_from_string(const std::string& s);

/// Result block embedded in reports as {test, statistic, p, n, sided, correction}.
struct TestResult {
  std::string test;
  double statistic = 0.0;
  double p = 1.0;
  int n = 0;
  Sided sided = Sided::two;
  std::string correction = "none";
  /// Exact permutation distribution (true) or normal approximation.
  bool exact = true;
};

nlohmann::json to_json(const TestResult& r);

/// Wilcoxon signed-rank test on paired differences a - b.
/// Zero differences are dropped and tied magnitudes get midranks. The statistic is W+,
/// the rank sum of positive differences. n <= 20 uses the exact 2^n sign-flip
/// distribution; larger n the tie-corrected normal approximation. `greater` tests a > b.
/// Throws std::domain_error when every difference is zero.
TestResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b, Sided sided = Sided::two);
TestResult wilcoxon_signed_rank(std::span<const double> differences, Sided sided = Sided::two);

/// Two-sided or one-sided exact sign test on paired differences (zeros dropped).
TestResult sign_test(std::span<const double> a, std::span<const double> b, Sided sided = Sided::two);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double mid() const { return 0.5 * (lo + hi); }
  double half_width() const { return 0.5 * (hi - lo); }
  bool contains(double x) const { return lo <= x && x <= hi; }
};

/// mean +/- t_{n-1, (1+level)/2} * s / sqrt(n); throws for n < 2.
Interval confidence_interval(std::span<const double> values, double level = 0.95);

/// Percentile bootstrap interval of the mean.
Interval bootstrap_interval(std::span<const double> values, double level, int resamples, std::uint64_t seed);

/// Clopper-Pearson interval for a binomial proportion.
Interval binomial_interval(int successes, int trials, double level = 0.99);

/// One-sided exact binomial tail P(X >= successes) under success probability p.
double binomial_upper_tail(int successes, int trials, double p);

struct Correlation {
  double r = 0.0;
  double p = 1.0;
  int n = 0;
};

/// Product-moment correlation with a two-sided p from the t transform; throws on n < 3 or zero variance.
Correlation pearson_r(std::span<const double> x, std::span<const double> y);

/// Pearson correlation of midranks.
Correlation spearman_r(std::span<const double> x, std::span<const double> y);

double mean(std::span<const double> values);
double median(std::vector<double> values);
double sample_sd(std::span<const double> values);

/// Midranks (1-based) of values.
std::vector<double> midranks(std::span<const double> values);

/// min(1, p * m).
double bonferroni(double p, int comparisons);

}  // namespace gdec::stats
