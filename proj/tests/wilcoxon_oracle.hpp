#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "groupdecode/stats.hpp"

namespace gdec::testing {

struct WilcoxonOracle {
  double w_plus = 0.0;
  double p = 1.0;
};

/// Exact signed-rank p by listing all 2^n sign assignments of the observed ranks.
inline WilcoxonOracle brute_force_wilcoxon(const std::vector<double>& diffs, stats::Sided sided) {
  std::vector<double> d;
  for (double v : diffs)
    if (v != 0.0) d.push_back(v);
  const std::size_t n = d.size();
  // midrank of |d_i| by counting
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      less += std::abs(d[j]) < std::abs(d[i]);
      equal += std::abs(d[j]) == std::abs(d[i]);
    }
    rank[i] = less + (equal + 1.0) / 2.0;
  }
  WilcoxonOracle out;
  for (std::size_t i = 0; i < n; ++i)
    if (d[i] > 0) out.w_plus += rank[i];
  double ge = 0, le = 0;
  const std::uint64_t total = std::uint64_t{1} << n;
  for (std::uint64_t mask = 0; mask < total; ++mask) {
    double w = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1u) w += rank[i];
    ge += w >= out.w_plus - 1e-9;
    le += w <= out.w_plus + 1e-9;
  }
  ge /= static_cast<double>(total);
  le /= static_cast<double>(total);
  switch (sided) {
    case stats::Sided::greater: out.p = ge; break;
    case stats::Sided::less: out.p = le; break;
    case stats::Sided::two: out.p = std::min(1.0, 2.0 * std::min(ge, le)); break;
  }
  return out;
}

}  // namespace gdec::testing
