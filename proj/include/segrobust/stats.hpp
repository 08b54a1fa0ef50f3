#pragma once

#include <vector>

namespace segrobust {

struct PairedTestResult {
  double w_statistic = 0.0;  // min(W+, W-)
  int n_effective = 0;       // pairs remaining after dropping zero diffs
  double p_two_sided = 1.0;
  bool exact = false;        // exact enumeration vs normal approximation
};

// Wilcoxon signed-rank test on paired samples. Zero differences are
// dropped; tied |differences| share average ranks. Exact two-sided p
// (full sign-assignment distribution) for n_effective <= 25, otherwise
// a normal approximation with continuity and tie-variance corrections.
// All-zero differences -> StatsError (test undefined).
PairedTestResult wilcoxon_signed_rank(const std::vector<double>& x,
                                      const std::vector<double>& y);

// p_adj = min(1, p * m); m must cover at least the list length.
std::vector<double> bonferroni(const std::vector<double>& p_values,
                               int64_t m);

}  // namespace segrobust
