#include "groupdecode/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "groupdecode/types.hpp"

namespace gdec::stats {

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw std::invalid_argument("accuracy: length mismatch");
  if (predictions.empty()) throw std::invalid_argument("accuracy: empty input");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

std::string to_string(Sided s) {
  switch (s) {
    case Sided::two: return "two-sided";
    case Sided::greater: return "greater";
    case Sided::less: return "less";
  }
  return "two-sided";
}

Sided sided_from_string(const std::string& s) {
  if (s == "two" || s == "two-sided") return Sided::two;
  if (s == "greater" || s == "one") return Sided::greater;
  if (s == "less") return Sided::less;
  throw std::invalid_argument("unknown sidedness '" + s + "'");
}

nlohmann::json to_json(const TestResult& r) {
  return {{"test", r.test}, {"statistic", r.statistic}, {"p", r.p},        {"n", r.n},
          {"sided", to_string(r.sided)}, {"correction", r.correction}, {"exact", r.exact}};
}

double mean(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("mean of empty input");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of empty input");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double sample_sd(std::span<const double> values) {
  if (values.size() < 2) throw std::invalid_argument("sample standard deviation needs n >= 2");
  const double m = mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

std::vector<double> midranks(std::span<const double> values) {
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

double sided_p(double lower_tail, double upper_tail, Sided sided) {
  switch (sided) {
    case Sided::greater: return std::min(1.0, upper_tail);
    case Sided::less: return std::min(1.0, lower_tail);
    case Sided::two: return std::min(1.0, 2.0 * std::min(lower_tail, upper_tail));
  }
  return 1.0;
}

}  // namespace

TestResult wilcoxon_signed_rank(std::span<const double> differences, Sided sided) {
  std::vector<double> nonzero;
  for (double d : differences) {
    if (!std::isfinite(d)) throw std::invalid_argument("wilcoxon: non-finite difference");
    if (d != 0.0) nonzero.push_back(d);
  }
  if (nonzero.empty()) throw std::domain_error("wilcoxon: all differences are zero, test undefined");
  const int n = static_cast<int>(nonzero.size());
  std::vector<double> magnitudes(nonzero.size());
  std::transform(nonzero.begin(), nonzero.end(), magnitudes.begin(), [](double d) { return std::abs(d); });
  const auto ranks = midranks(magnitudes);

  double w_plus = 0.0;
  for (std::size_t i = 0; i < nonzero.size(); ++i)
    if (nonzero[i] > 0) w_plus += ranks[i];

  TestResult r;
  r.test = "wilcoxon_signed_rank";
  r.statistic = w_plus;
  r.n = n;
  r.sided = sided;

  if (n <= 20) {
    // midranks are multiples of 1/2, so doubled ranks index an integer distribution
    std::vector<int> doubled(ranks.size());
    std::transform(ranks.begin(), ranks.end(), doubled.begin(), [](double x) { return static_cast<int>(std::lround(2 * x)); });
    const int max_sum = std::accumulate(doubled.begin(), doubled.end(), 0);
    std::vector<double> counts(static_cast<std::size_t>(max_sum) + 1, 0.0);
    counts[0] = 1.0;
    for (int rk : doubled)
      for (int s = max_sum; s >= rk; --s) counts[static_cast<std::size_t>(s)] += counts[static_cast<std::size_t>(s - rk)];
    const double total = std::ldexp(1.0, n);
    const int observed = static_cast<int>(std::lround(2 * w_plus));
    double lower = 0.0, upper = 0.0;
    for (int s = 0; s <= max_sum; ++s) {
      if (s <= observed) lower += counts[static_cast<std::size_t>(s)];
      if (s >= observed) upper += counts[static_cast<std::size_t>(s)];
    }
    r.p = sided_p(lower / total, upper / total, sided);
    r.exact = true;
    return r;
  }

  const double nn = static_cast<double>(n);
  double tie_term = 0.0;
  {
    std::vector<double> sorted = magnitudes;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size();) {
      std::size_t j = i;
      while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i + 1);
      tie_term += t * t * t - t;
      i = j + 1;
    }
  }
  const double mu = nn * (nn + 1) / 4.0;
  const double var = nn * (nn + 1) * (2 * nn + 1) / 24.0 - tie_term / 48.0;
  const double z = (w_plus - mu) / std::sqrt(var);
  const boost::math::normal_distribution<> normal;
  r.p = sided_p(boost::math::cdf(normal, z), boost::math::cdf(boost::math::complement(normal, z)), sided);
  r.exact = false;
  return r;
}

TestResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b, Sided sided) {
  if (a.size() != b.size()) throw std::invalid_argument("wilcoxon: paired samples differ in length");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return wilcoxon_signed_rank(d, sided);
}

double binomial_upper_tail(int successes, int trials, double p) {
  if (successes <= 0) return 1.0;
  if (successes > trials) return 0.0;
  const boost::math::binomial_distribution<> dist(trials, p);
  return boost::math::cdf(boost::math::complement(dist, successes - 1));
}

TestResult sign_test(std::span<const double> a, std::span<const double> b, Sided sided) {
  if (a.size() != b.size()) throw std::invalid_argument("sign test: paired samples differ in length");
  int pos = 0, n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d == 0.0) continue;
    ++n;
    pos += d > 0.0;
  }
  if (n == 0) throw std::domain_error("sign test: all differences are zero, test undefined");
  TestResult r;
  r.test = "sign_test";
  r.statistic = pos;
  r.n = n;
  r.sided = sided;
  const double upper = binomial_upper_tail(pos, n, 0.5);
  const double lower = binomial_upper_tail(n - pos, n, 0.5);
  r.p = sided_p(lower, upper, sided);
  return r;
}

Interval confidence_interval(std::span<const double> values, double level) {
  if (values.size() < 2) throw std::invalid_argument("confidence interval needs n >= 2");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("confidence level must lie in (0, 1)");
  const double m = mean(values);
  const double sd = sample_sd(values);
  const boost::math::students_t dist(static_cast<double>(values.size() - 1));
  const double t = boost::math::quantile(dist, 0.5 + level / 2.0);
  const double half = t * sd / std::sqrt(static_cast<double>(values.size()));
  return {m - half, m + half};
}

Interval bootstrap_interval(std::span<const double> values, double level, int resamples, std::uint64_t seed) {
  if (values.empty()) throw std::invalid_argument("bootstrap of empty input");
  if (resamples < 1) throw std::invalid_argument("bootstrap needs at least one resample");
  Rng rng = make_rng(seed, 200);
  std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (auto& m : means) {
    double sum = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) sum += values[pick(rng)];
    m = sum / static_cast<double>(values.size());
  }
  std::sort(means.begin(), means.end());
  auto at = [&](double q) {
    const double pos = q * static_cast<double>(means.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, means.size() - 1);
    return means[lo] + (pos - static_cast<double>(lo)) * (means[hi] - means[lo]);
  };
  return {at((1.0 - level) / 2.0), at((1.0 + level) / 2.0)};
}

Interval binomial_interval(int successes, int trials, double level) {
  if (trials < 1 || successes < 0 || successes > trials) throw std::invalid_argument("binomial interval: bad counts");
  const double alpha = 1.0 - level;
  using boost::math::binomial_distribution;
  const double lo = successes == 0 ? 0.0
                                   : binomial_distribution<>::find_lower_bound_on_p(trials, successes, alpha / 2.0);
  const double hi = successes == trials ? 1.0
                                        : binomial_distribution<>::find_upper_bound_on_p(trials, successes, alpha / 2.0);
  return {lo, hi};
}

Correlation pearson_r(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson_r: length mismatch");
  if (x.size() < 3) throw std::invalid_argument("pearson_r needs n >= 3");
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) throw std::invalid_argument("pearson_r: zero-variance input");
  Correlation c;
  c.n = static_cast<int>(x.size());
  c.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double df = static_cast<double>(c.n - 2);
  if (std::abs(c.r) >= 1.0) {
    c.p = 0.0;
  } else {
    const double t = c.r * std::sqrt(df / (1.0 - c.r * c.r));
    const boost::math::students_t dist(df);
    c.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
  }
  return c;
}

Correlation spearman_r(std::span<const double> x, std::span<const double> y) {
  const auto rx = midranks(x);
  const auto ry = midranks(y);
  return pearson_r(rx, ry);
}

double bonferroni(double p, int comparisons) {
  if (comparisons < 1) throw std::invalid_argument("bonferroni: comparisons must be positive");
  return std::min(1.0, p * comparisons);
}

}  // namespace gdec::stats
