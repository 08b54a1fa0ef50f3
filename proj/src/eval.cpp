#include "segrobust/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "segrobust/error.hpp"
#include "segrobust/infer.hpp"

namespace segrobust {

namespace {

std::string trim_number(double v) {
  std::ostringstream os;
  os << v;  // default 6 significant digits, no trailing zeros
  return os.str();
}


SubjectRecord make_record(const Subject& subject, const AttackSpec& spec,
                          const std::string& condition, const Tensor& clean,
                          const Tensor& adversarial, const SegModel& model) {
  SubjectRecord rec;
  rec.subject_id = subject.id;
  rec.condition = condition;
  rec.epsilon = spec.epsilon;
  rec.iterations = spec.steps;
  const LabelMap pred = predict_labels(model, adversarial);
  const RegionDiceTriple d = region_dice_triple(pred, subject.labels);
  rec.dice_whole = d.whole;
  rec.dice_core = d.core;
  rec.dice_enh = d.enh;
  const QualityReport q = quality_report(clean, adversarial);
  rec.psnr_db = q.psnr_db;
  rec.ssim = q.ssim;
  rec.rmse = q.rmse;
  return rec;
}

void fill_aggregates(RobustnessReport& report,
                     const std::vector<AttackSpec>& specs,
                     const std::vector<std::string>& labels) {
  // One Bonferroni family per region: m = number of non-reference
  // conditions compared in this report.
  const int64_t m = static_cast<int64_t>(labels.size()) - 1;
  for (Region region : kRegions) {
    const std::vector<double> reference =
        report.region_dice_column(report.reference_condition, region);
    std::vector<AggregateRow> rows;
    std::vector<size_t> tested;
    std::vector<double> p_raw;
    for (size_t c = 0; c < labels.size(); ++c) {
      const std::vector<double> column =
          report.region_dice_column(labels[c], region);
      AggregateRow row;
      row.condition = labels[c];
      row.epsilon = specs[c].epsilon;
      row.iterations = specs[c].steps;
      row.region = region_name(region);
      double mean = 0.0;
      for (double v : column) mean += v;
      mean /= static_cast<double>(column.size());
      double ss = 0.0;
      for (double v : column) ss += (v - mean) * (v - mean);
      row.mean = mean;
      row.sd = column.size() > 1
                   ? std::sqrt(ss / static_cast<double>(column.size() - 1))
                   : 0.0;
      if (labels[c] != report.reference_condition && m >= 1) {
        try {
          const PairedTestResult t = wilcoxon_signed_rank(reference, column);
          row.p_raw = t.p_two_sided;
          tested.push_back(rows.size());
          p_raw.push_back(t.p_two_sided);
        } catch (const StatsError&) {
          // identical columns (attack had no effect); leave p empty
        }
      }
      rows.push_back(std::move(row));
    }
    if (!p_raw.empty()) {
      const std::vector<double> adj = bonferroni(p_raw, m);
      for (size_t i = 0; i < tested.size(); ++i) {
        rows[tested[i]].p_adj = adj[i];
      }
    }
    for (AggregateRow& row : rows) report.aggregates.push_back(std::move(row));
  }
}

}  // namespace

std::string condition_label(const AttackSpec& spec) {
  if (spec.epsilon == 0.0) return "clean";
  std::string label = attack_method_name(spec.method);
  label += "_eps" + trim_number(spec.epsilon);
  if (spec.steps > 1) label += "_n" + std::to_string(spec.steps);
  return label;
}

std::vector<double> RobustnessReport::region_dice_column(
    const std::string& condition, Region region) const {
  std::vector<double> out;
  for (const SubjectRecord& r : records) {
    if (r.condition != condition) continue;
    switch (region) {
      case Region::kWholeTumor: out.push_back(r.dice_whole); break;
      case Region::kTumorCore: out.push_back(r.dice_core); break;
      case Region::kEnhancingTumor: out.push_back(r.dice_enh); break;
    }
  }
  if (out.empty()) {
    throw StatsError("no records for condition '" + condition + "'");
  }
  return out;
}

const AggregateRow& RobustnessReport::aggregate(const std::string& condition,
                                                Region region) const {
  for (const AggregateRow& row : aggregates) {
    if (row.condition == condition && row.region == region_name(region)) {
      return row;
    }
  }
  throw StatsError("no aggregate row for condition '" + condition + "'");
}

double RobustnessReport::mean_quality(const std::string& condition,
                                      double SubjectRecord::* field) const {
  double acc = 0.0;
  int64_t n = 0;
  for (const SubjectRecord& r : records) {
    if (r.condition != condition) continue;
    acc += r.*field;
    ++n;
  }
  if (n == 0) throw StatsError("no records for condition '" + condition + "'");
  return acc / static_cast<double>(n);
}

void RobustnessReport::save_records_csv(const std::string& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "subject_id,condition,epsilon,iterations,dice_whole,dice_core,"
        "dice_enh,psnr_db,ssim,rmse\n";
  os << std::setprecision(12);
  for (const SubjectRecord& r : records) {
    os << r.subject_id << "," << r.condition << "," << r.epsilon << ","
       << r.iterations << "," << r.dice_whole << "," << r.dice_core << ","
       << r.dice_enh << "," << r.psnr_db << "," << r.ssim << "," << r.rmse
       << "\n";
  }
  if (!os) throw IoError("write failure on " + path);
}

void RobustnessReport::save_aggregates_csv(const std::string& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "condition,epsilon,iterations,region,mean,sd,p_raw,p_adj\n";
  os << std::setprecision(12);
  for (const AggregateRow& row : aggregates) {
    os << row.condition << "," << row.epsilon << "," << row.iterations << ","
       << row.region << "," << row.mean << "," << row.sd << ",";
    if (row.p_raw) os << *row.p_raw;
    os << ",";
    if (row.p_adj) os << *row.p_adj;
    os << "\n";
  }
  if (!os) throw IoError("write failure on " + path);
}

RobustnessReport evaluate_robustness(const SegModel& model,
                                     const std::vector<Subject>& test_set,
                                     const std::vector<AttackSpec>& grid,
                                     uint8_t tifgsm_fill) {
  if (test_set.empty()) {
    throw ConfigError("evaluation requires a nonempty test set");
  }
  if (grid.empty()) throw ConfigError("attack grid is empty");
  for (const AttackSpec& spec : grid) spec.validate(false);
  const auto reference_it =
      std::find_if(grid.begin(), grid.end(),
                   [](const AttackSpec& s) { return s.epsilon == 0.0; });
  if (reference_it == grid.end()) {
    throw ConfigError("attack grid must include the epsilon = 0 reference");
  }

  RobustnessReport report;
  std::vector<std::string> labels;
  for (const AttackSpec& spec : grid) {
    labels.push_back(condition_label(spec));
  }
  report.conditions = labels;
  report.reference_condition =
      labels[static_cast<size_t>(reference_it - grid.begin())];

  for (const Subject& subject : test_set) {
    for (size_t c = 0; c < grid.size(); ++c) {
      const AttackSpec& spec = grid[c];
      try {
        Tensor adversarial;
        if (spec.epsilon == 0.0) {
          adversarial = subject.volume;
        } else {
          AttackSpec run = spec;
          if (run.method == AttackMethod::kTiFgsm && !run.target) {
            run.target = uniform_target(subject.labels.shape, tifgsm_fill);
          }
          adversarial =
              run_attack(model, subject.volume,
                         one_hot(subject.labels, model.config().num_classes),
                         run)
                  .adversarial_volume;
        }
        report.records.push_back(make_record(subject, spec, labels[c],
                                             subject.volume, adversarial,
                                             model));
      } catch (const IoError& e) {
        throw IoError("evaluating subject '" + subject.id + "' under '" +
                      labels[c] + "': " + e.what());
      } catch (const Error& e) {
        throw Error("evaluating subject '" + subject.id + "' under '" +
                    labels[c] + "': " + e.what());
      }
    }
  }
  fill_aggregates(report, grid, labels);
  return report;
}

RobustnessReport iteration_sweep(const SegModel& model,
                                 const std::vector<Subject>& test_set,
                                 AttackMethod method, double alpha, int n_max,
                                 uint8_t tifgsm_fill) {
  if (test_set.empty()) {
    throw ConfigError("evaluation requires a nonempty test set");
  }
  if (n_max < 1) throw ConfigError("iteration sweep needs n_max >= 1");
  if (method == AttackMethod::kFgsm) {
    throw ConfigError("iteration sweep applies to iterative methods only");
  }
  if (!(alpha > 0)) throw ConfigError("iteration sweep needs alpha > 0");

  std::vector<AttackSpec> specs;
  std::vector<std::string> labels;
  {
    AttackSpec clean;
    clean.method = method;
    clean.epsilon = 0.0;
    clean.steps = 1;
    specs.push_back(clean);
    labels.push_back("clean");
  }
  for (int n = 1; n <= n_max; ++n) {
    AttackSpec s;
    s.method = method;
    s.epsilon = alpha;
    s.steps = n;
    specs.push_back(s);
    labels.push_back(std::string(attack_method_name(method)) + "_n" +
                     std::to_string(n));
  }

  RobustnessReport report;
  report.conditions = labels;
  report.reference_condition = "clean";
  for (const Subject& subject : test_set) {
    try {
      report.records.push_back(make_record(subject, specs[0], labels[0],
                                           subject.volume, subject.volume,
                                           model));
      const Tensor truth =
          one_hot(subject.labels, model.config().num_classes);
      const AttackTrajectory traj =
          method == AttackMethod::kIFgsm
              ? ifgsm_trajectory(model, subject.volume, truth, alpha, n_max)
              : tifgsm_trajectory(
                    model, subject.volume,
                    uniform_target(subject.labels.shape, tifgsm_fill), alpha,
                    n_max);
      for (int n = 1; n <= n_max; ++n) {
        report.records.push_back(
            make_record(subject, specs[static_cast<size_t>(n)],
                        labels[static_cast<size_t>(n)], subject.volume,
                        traj.iterates[static_cast<size_t>(n - 1)], model));
      }
    } catch (const Error& e) {
      throw Error("iteration sweep on subject '" + subject.id +
                  "': " + e.what());
    }
  }
  fill_aggregates(report, specs, labels);
  return report;
}

}  // namespace segrobust
