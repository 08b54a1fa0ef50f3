#include "segrobust/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>

#include "segrobust/error.hpp"

namespace segrobust {

namespace {

struct RankedDiffs {
  std::vector<double> ranks;  // rank of |d_i|, ties averaged
  std::vector<bool> positive;
  std::vector<int64_t> tie_sizes;
};

RankedDiffs rank_differences(const std::vector<double>& x,
                             const std::vector<double>& y) {
  if (x.size() != y.size()) {
    throw StatsError("paired samples differ in length: " +
                     std::to_string(x.size()) + " vs " +
                     std::to_string(y.size()));
  }
  if (x.empty()) throw StatsError("signed-rank test needs at least one pair");
  std::vector<double> diff;
  for (size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    if (d != 0.0) diff.push_back(d);
  }
  if (diff.empty()) {
    throw StatsError(
        "all paired differences are zero; the signed-rank test is undefined");
  }
  const size_t n = diff.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return std::fabs(diff[a]) < std::fabs(diff[b]);
  });

  RankedDiffs out;
  out.ranks.resize(n);
  out.positive.resize(n);
  for (size_t i = 0; i < n; ++i) out.positive[i] = diff[i] > 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n &&
           std::fabs(diff[order[j + 1]]) == std::fabs(diff[order[i]])) {
      ++j;
    }
    // positions i..j (0-based) share average rank
    const double avg =
        (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (size_t k = i; k <= j; ++k) out.ranks[order[k]] = avg;
    out.tie_sizes.push_back(static_cast<int64_t>(j - i + 1));
    i = j + 1;
  }
  return out;
}

// Exact null distribution of W+ over all 2^n sign assignments, as
// counts indexed by doubled rank sums (average ranks are half-integer).
double exact_two_sided_p(const RankedDiffs& r, double w_plus) {
  std::vector<int64_t> doubled(r.ranks.size());
  int64_t total = 0;
  for (size_t i = 0; i < r.ranks.size(); ++i) {
    doubled[i] = std::llround(2.0 * r.ranks[i]);
    total += doubled[i];
  }
  std::vector<double> count(static_cast<size_t>(total) + 1, 0.0);
  count[0] = 1.0;
  int64_t reach = 0;
  for (int64_t d : doubled) {
    reach += d;
    for (int64_t s = reach; s >= d; --s) {
      count[static_cast<size_t>(s)] += count[static_cast<size_t>(s - d)];
    }
  }
  const double denom = std::pow(2.0, static_cast<double>(doubled.size()));
  const int64_t w2 = std::llround(2.0 * w_plus);
  double below = 0.0, above = 0.0;
  for (int64_t s = 0; s <= total; ++s) {
    if (s <= w2) below += count[static_cast<size_t>(s)];
    if (s >= w2) above += count[static_cast<size_t>(s)];
  }
  return std::min(1.0, 2.0 * std::min(below, above) / denom);
}

double normal_two_sided_p(const RankedDiffs& r, double w_plus) {
  const double n = static_cast<double>(r.ranks.size());
  const double mu = n * (n + 1.0) / 4.0;
  double tie_term = 0.0;
  for (int64_t t : r.tie_sizes) {
    const double td = static_cast<double>(t);
    tie_term += td * td * td - td;
  }
  const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
  if (var <= 0.0) {
    throw StatsError("signed-rank variance degenerate (all ranks tied away)");
  }
  double dev = w_plus - mu;
  // continuity correction toward the mean
  if (dev > 0.5) {
    dev -= 0.5;
  } else if (dev < -0.5) {
    dev += 0.5;
  } else {
    dev = 0.0;
  }
  const double z = dev / std::sqrt(var);
  return std::min(1.0, std::erfc(std::fabs(z) / std::sqrt(2.0)));
}

}  // namespace

PairedTestResult wilcoxon_signed_rank(const std::vector<double>& x,
                                      const std::vector<double>& y) {
  const RankedDiffs r = rank_differences(x, y);
  double w_plus = 0.0, w_minus = 0.0;
  for (size_t i = 0; i < r.ranks.size(); ++i) {
    (r.positive[i] ? w_plus : w_minus) += r.ranks[i];
  }
  PairedTestResult out;
  out.n_effective = static_cast<int>(r.ranks.size());
  out.w_statistic = std::min(w_plus, w_minus);
  out.exact = out.n_effective <= 25;
  out.p_two_sided = out.exact ? exact_two_sided_p(r, w_plus)
                              : normal_two_sided_p(r, w_plus);
  return out;
}

std::vector<double> bonferroni(const std::vector<double>& p_values,
                               int64_t m) {
  if (p_values.empty()) {
    throw StatsError("bonferroni needs at least one p-value");
  }
  if (m < static_cast<int64_t>(p_values.size())) {
    throw StatsError("bonferroni family size " + std::to_string(m) +
                     " smaller than the number of tests (" +
                     std::to_string(p_values.size()) + ")");
  }
  std::vector<double> out;
  out.reserve(p_values.size());
  for (double p : p_values) {
    out.push_back(std::min(1.0, p * static_cast<double>(m)));
  }
  return out;
}

}  // namespace segrobust
