#pragma once

#include <optional>
#include <string>
#include <vector>

#include "segrobust/attacks.hpp"
#include "segrobust/data.hpp"
#include "segrobust/metrics.hpp"
#include "segrobust/stats.hpp"
#include "segrobust/unet.hpp"

namespace segrobust {

struct SubjectRecord {
  std::string subject_id;
  std::string condition;
  double epsilon = 0.0;  // per-step size (total budget = epsilon * iterations)
  int iterations = 1;
  double dice_whole = 0.0;
  double dice_core = 0.0;
  double dice_enh = 0.0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double rmse = 0.0;
};

struct AggregateRow {
  std::string condition;
  double epsilon = 0.0;
  int iterations = 1;
  std::string region;
  double mean = 0.0;
  double sd = 0.0;
  std::optional<double> p_raw;  // vs the reference condition
  std::optional<double> p_adj;
};

struct RobustnessReport {
  std::string reference_condition;
  std::vector<std::string> conditions;  // in grid order
  std::vector<SubjectRecord> records;
  std::vector<AggregateRow> aggregates;

  void save_records_csv(const std::string& path) const;
  void save_aggregates_csv(const std::string& path) const;

  // Per-subject Dice for one condition/region, in test-set order.
  std::vector<double> region_dice_column(const std::string& condition,
                                         Region region) const;
  const AggregateRow& aggregate(const std::string& condition,
                                Region region) const;
  double mean_quality(const std::string& condition,
                      double SubjectRecord::* field) const;
};

// Human-readable label for one grid entry ("clean" when epsilon == 0).
std::string condition_label(const AttackSpec& spec);

// Attack the test set over a grid of attack conditions; the grid must
// contain the epsilon = 0 reference. Dice is computed against ground
// truth, quality metrics against the clean input, and per-region
// Wilcoxon p-values against the reference condition are Bonferroni
// adjusted with m = number of non-reference conditions. tifgsm entries
// without a target get a uniform map of `tifgsm_fill`.
RobustnessReport evaluate_robustness(const SegModel& model,
                                     const std::vector<Subject>& test_set,
                                     const std::vector<AttackSpec>& grid,
                                     uint8_t tifgsm_fill = 1);

// One condition per iteration count 1..n_max at fixed per-step alpha,
// from a single N-step trajectory per subject (iterates are
// prefix-stable). Includes the clean reference.
RobustnessReport iteration_sweep(const SegModel& model,
                                 const std::vector<Subject>& test_set,
                                 AttackMethod method, double alpha, int n_max,
                                 uint8_t tifgsm_fill = 1);

}  // namespace segrobust
