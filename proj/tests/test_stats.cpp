#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"

#include "groupdecode/stats.hpp"
#include "groupdecode/types.hpp"
#include "wilcoxon_oracle.hpp"

using namespace gdec;
using namespace gdec::stats;

TEST_CASE("accuracy examples") {
  std::vector<int> labels(118), preds(118);
  for (int i = 0; i < 118; ++i) {
    labels[i] = i;
    preds[i] = i < 59 ? i : (i + 1) % 118;
  }
  CHECK(accuracy(preds, labels) == 0.5);
  CHECK(accuracy(labels, labels) == 1.0);
  CHECK_THROWS(accuracy(std::vector<int>{}, std::vector<int>{}));
  CHECK_THROWS(accuracy(std::vector<int>{1}, std::vector<int>{1, 2}));
}

TEST_CASE("random guessing sits at chance") {
  Rng rng(1);
  std::uniform_int_distribution<int> cls(0, 117);
  const int n = 10000;
  std::vector<int> p(n), l(n);
  for (int i = 0; i < n; ++i) {
    p[i] = cls(rng);
    l[i] = cls(rng);
  }
  const double acc = accuracy(p, l);
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  const int correct = static_cast<int>(std::lround(acc * n));
  CHECK(binomial_interval(correct, n, 0.99).contains(1.0 / 118.0));
}

TEST_CASE("Wilcoxon hand examples") {
  std::vector<double> d{1, 2, 3};
  auto r = wilcoxon_signed_rank(d);
  CHECK(r.statistic == 6.0);
  CHECK(r.p == doctest::Approx(0.25));
  CHECK(r.exact);
  CHECK(wilcoxon_signed_rank(d, Sided::greater).p == doctest::Approx(0.125));
  CHECK(wilcoxon_signed_rank(d, Sided::less).p == doctest::Approx(1.0));
  std::vector<double> anti{-1, 1};
  CHECK(wilcoxon_signed_rank(anti).p == doctest::Approx(1.0));
  std::vector<double> zeros{0, 0};
  CHECK_THROWS_AS(wilcoxon_signed_rank(zeros), std::domain_error);
  // zeros are dropped before ranking
  std::vector<double> with_zero{0, 1, 2, 3};
  CHECK(wilcoxon_signed_rank(with_zero).n == 3);
  CHECK(wilcoxon_signed_rank(with_zero).p == doctest::Approx(0.25));
}

TEST_CASE("Wilcoxon paired form uses a - b") {
  std::vector<double> a{3, 4, 5, 6}, b{1, 1, 1, 1};
  auto r = wilcoxon_signed_rank(a, b, Sided::greater);
  CHECK(r.p == doctest::Approx(1.0 / 16.0));
}

TEST_CASE("Wilcoxon exact p equals brute-force enumeration") {
  Rng rng(7);
  std::normal_distribution<double> nd(0.3, 1.0);
  std::uniform_int_distribution<int> small(-3, 3);
  for (int n = 1; n <= 10; ++n)
    for (int rep = 0; rep < 12; ++rep) {
      std::vector<double> d(static_cast<std::size_t>(n));
      // half the cases use small integers so ties and zeros appear
      for (auto& v : d) v = rep % 2 ? nd(rng) : small(rng);
      bool all_zero = true;
      for (double v : d) all_zero = all_zero && v == 0.0;
      if (all_zero) continue;
      for (auto sided : {Sided::two, Sided::greater, Sided::less}) {
        const auto oracle = gdec::testing::brute_force_wilcoxon(d, sided);
        const auto r = wilcoxon_signed_rank(d, sided);
        CHECK(r.statistic == doctest::Approx(oracle.w_plus));
        CHECK(r.p == doctest::Approx(oracle.p).epsilon(1e-12));
      }
    }
}

TEST_CASE("Wilcoxon p is invariant to positive rescaling") {
  Rng rng(8);
  std::normal_distribution<double> nd;
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<double> d(8);
    for (auto& v : d) v = nd(rng);
    std::vector<double> scaled = d;
    for (auto& v : scaled) v *= 37.5;
    CHECK(wilcoxon_signed_rank(d).p == wilcoxon_signed_rank(scaled).p);
  }
}

TEST_CASE("large samples use the normal approximation") {
  Rng rng(9);
  std::normal_distribution<double> nd(1.0, 1.0);
  std::vector<double> d(40);
  for (auto& v : d) v = nd(rng);
  auto r = wilcoxon_signed_rank(d, Sided::greater);
  CHECK_FALSE(r.exact);
  // no ties among continuous draws: z = (W - n(n+1)/4) / sqrt(n(n+1)(2n+1)/24)
  const double z = (r.statistic - 40.0 * 41.0 / 4.0) / std::sqrt(40.0 * 41.0 * 81.0 / 24.0);
  CHECK(r.p == doctest::Approx(0.5 * std::erfc(z / std::sqrt(2.0))).epsilon(1e-9));
  CHECK(r.p < 0.05);
}

TEST_CASE("sign test") {
  std::vector<double> a{2, 3, 4, 5, 6}, b{1, 1, 1, 1, 1};
  CHECK(sign_test(a, b, Sided::greater).p == doctest::Approx(1.0 / 32.0));
  CHECK(sign_test(a, b, Sided::two).p == doctest::Approx(2.0 / 32.0));
  std::vector<double> c{1, 1, 2}, d{1, 0, 3};
  CHECK(sign_test(c, d).n == 2);
}

TEST_CASE("Student-t interval") {
  std::vector<double> same{0.4, 0.4, 0.4};
  auto z = confidence_interval(same);
  CHECK(z.lo == doctest::Approx(0.4));
  CHECK(z.hi == doctest::Approx(0.4));
  std::vector<double> two{0.0, 1.0};
  auto ci = confidence_interval(two);
  CHECK(ci.mid() == doctest::Approx(0.5));
  // t_{1,0.975} = 12.7062, s = 1/sqrt(2), n = 2
  CHECK(ci.half_width() == doctest::Approx(12.7062047 * (1.0 / std::sqrt(2.0)) / std::sqrt(2.0)).epsilon(1e-6));
  CHECK(ci.half_width() == doctest::Approx(6.353).epsilon(1e-4));
  CHECK_THROWS(confidence_interval(std::vector<double>{1.0}));
}

TEST_CASE("intervals contain the mean") {
  Rng rng(10);
  std::normal_distribution<double> nd;
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> v(2 + rep % 9);
    for (auto& x : v) x = nd(rng);
    CHECK(confidence_interval(v).contains(mean(v)));
    CHECK(bootstrap_interval(v, 0.95, 500, static_cast<std::uint64_t>(rep)).contains(mean(v)));
  }
}

TEST_CASE("bootstrap interval is seeded") {
  std::vector<double> v{0.1, 0.5, 0.2, 0.9, 0.4};
  auto a = bootstrap_interval(v, 0.95, 1000, 3);
  auto b = bootstrap_interval(v, 0.95, 1000, 3);
  CHECK(a.lo == b.lo);
  CHECK(a.hi == b.hi);
  CHECK(a.lo >= 0.1);
  CHECK(a.hi <= 0.9);
}

TEST_CASE("Clopper-Pearson interval and binomial tail") {
  auto ci = binomial_interval(0, 10, 0.95);
  CHECK(ci.lo == 0.0);
  // upper limit solves (1 - p)^10 = 0.025
  CHECK(ci.hi == doctest::Approx(1.0 - std::pow(0.025, 0.1)).epsilon(1e-9));
  CHECK(binomial_upper_tail(0, 5, 0.3) == doctest::Approx(1.0));
  CHECK(binomial_upper_tail(5, 5, 0.5) == doctest::Approx(1.0 / 32.0));
  CHECK(binomial_upper_tail(4, 5, 0.5) == doctest::Approx(6.0 / 32.0));
}

TEST_CASE("Pearson correlation examples and properties") {
  std::vector<double> x{1, 2, 3, 4, 5}, y2(5), yn(5);
  for (int i = 0; i < 5; ++i) {
    y2[i] = 2 * x[i] + 1;
    yn[i] = -x[i];
  }
  CHECK(pearson_r(x, y2).r == doctest::Approx(1.0));
  CHECK(pearson_r(x, yn).r == doctest::Approx(-1.0));
  CHECK_THROWS(pearson_r(std::vector<double>{1, 2}, std::vector<double>{1, 2}));
  CHECK_THROWS(pearson_r(x, std::vector<double>{3, 3, 3, 3, 3}));

  Rng rng(11);
  std::normal_distribution<double> nd;
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<double> a(12), b(12), a2(12), bneg(12);
    for (int i = 0; i < 12; ++i) {
      a[i] = nd(rng);
      b[i] = a[i] + nd(rng);
      a2[i] = 3.0 * a[i] - 4.0;
      bneg[i] = -b[i];
    }
    const double r = pearson_r(a, b).r;
    CHECK(pearson_r(a2, b).r == doctest::Approx(r).epsilon(1e-12));
    CHECK(pearson_r(a, bneg).r == doctest::Approx(-r).epsilon(1e-12));
    // textbook p from the t transform
    const double t = r * std::sqrt(10.0 / (1 - r * r));
    CHECK(pearson_r(a, b).p > 0.0);
    if (std::abs(t) > 3.17) CHECK(pearson_r(a, b).p < 0.01);
  }
}

TEST_CASE("independent samples are nearly uncorrelated") {
  Rng rng(12);
  std::normal_distribution<double> nd;
  std::vector<double> a(10000), b(10000);
  for (int i = 0; i < 10000; ++i) {
    a[i] = nd(rng);
    b[i] = nd(rng);
  }
  CHECK(std::abs(pearson_r(a, b).r) < 0.05);
}

TEST_CASE("Spearman uses midranks") {
  std::vector<double> x{1, 2, 3, 4}, y{1, 4, 9, 16};
  CHECK(spearman_r(x, y).r == doctest::Approx(1.0));
  auto r = midranks(std::vector<double>{3, 1, 3, 2});
  CHECK(r == std::vector<double>{3.5, 1, 3.5, 2});
}

TEST_CASE("summary helpers") {
  CHECK(median({3, 1, 2}) == 2.0);
  CHECK(median({4, 1, 2, 3}) == 2.5);
  CHECK(sample_sd(std::vector<double>{1, 2, 3, 4}) == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(bonferroni(0.03, 2) == doctest::Approx(0.06));
  CHECK(bonferroni(0.6, 2) == 1.0);
  CHECK(sided_from_string("greater") == Sided::greater);
  CHECK(to_json(wilcoxon_signed_rank(std::vector<double>{1, 2, 3}))["sided"] == "two-sided");
}
