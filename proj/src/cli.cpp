#include "segrobust/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "segrobust/attacks.hpp"
#include "segrobust/defenses.hpp"
#include "segrobust/error.hpp"
#include "segrobust/eval.hpp"
#include "segrobust/infer.hpp"
#include "segrobust/report.hpp"

namespace fs = std::filesystem;

namespace segrobust {

namespace {

std::string subject_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "subject_%02d", index);
  return buf;
}

fs::path ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string());
  return dir;
}

std::string checkpoint_stem(const std::string& path) {
  return fs::path(path).stem().string();
}

SegModel load_model(const std::string& path) {
  try {
    return SegModel::load_checkpoint(path);
  } catch (const IoError& e) {
    throw IoError(std::string(e.what()) + " (checkpoint " + path + ")");
  }
}

double budget_x(const AggregateRow& row, bool sweep) {
  if (row.condition == "clean") return 0.0;
  return sweep ? static_cast<double>(row.iterations)
               : row.epsilon * row.iterations;
}

// One chart per region, one series per model, points in grid order.
void write_region_charts(
    const fs::path& eval_dir,
    const std::vector<std::pair<std::string, RobustnessReport>>& reports,
    bool sweep) {
  const std::string x_label = sweep ? "iterations" : "attack budget (L-inf)";
  for (Region region : kRegions) {
    std::vector<ChartSeries> series;
    for (const auto& [label, report] : reports) {
      ChartSeries s;
      s.name = label;
      for (const AggregateRow& row : report.aggregates) {
        if (row.region != region_name(region)) continue;
        s.x.push_back(budget_x(row, sweep));
        s.y.push_back(row.mean);
      }
      series.push_back(std::move(s));
    }
    const fs::path path =
        eval_dir / ("curve_" + std::string(region_name(region)) + ".svg");
    write_line_chart_svg(path.string(),
                         "Mean " + std::string(region_name(region)) +
                             " Dice vs " + x_label,
                         x_label, "mean Dice", series);
  }
}

struct AggregateCsvRow {
  std::string condition, region;
  double epsilon = 0.0;
  int iterations = 1;
  double mean = 0.0, sd = 0.0;
  std::optional<double> p_raw, p_adj;
};

std::vector<AggregateCsvRow> read_aggregates_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty file " + path.string());
  std::vector<AggregateCsvRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    while (cells.size() < 8) cells.emplace_back();
    AggregateCsvRow row;
    row.condition = cells[0];
    row.epsilon = std::stod(cells[1]);
    row.iterations = std::stoi(cells[2]);
    row.region = cells[3];
    row.mean = std::stod(cells[4]);
    row.sd = std::stod(cells[5]);
    if (!cells[6].empty()) row.p_raw = std::stod(cells[6]);
    if (!cells[7].empty()) row.p_adj = std::stod(cells[7]);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

Dataset build_dataset(const DataConfig& data) {
  Rng rng(data.seed);
  std::vector<Subject> subjects;
  subjects.reserve(static_cast<size_t>(data.n_subjects));
  for (int i = 0; i < data.n_subjects; ++i) {
    const uint64_t sub_seed = rng.derive();
    Phantom phantom = generate_phantom(sub_seed, data.extent);
    Subject s;
    s.id = subject_name(i);
    s.volume = standardize(phantom.volume);
    s.labels = std::move(phantom.labels);
    subjects.push_back(std::move(s));
  }
  return split_dataset(std::move(subjects), data.test_fraction, data.seed);
}

std::vector<AttackSpec> build_attack_specs(const AttackGridConfig& grid) {
  const AttackMethod method = parse_attack_method(grid.method);
  std::vector<AttackSpec> specs;
  for (double total : grid.epsilons) {
    AttackSpec spec;
    spec.method = method;
    if (method == AttackMethod::kFgsm || total == 0.0) {
      spec.epsilon = total;
      spec.steps = 1;
    } else {
      spec.epsilon = total / grid.iterations;
      spec.steps = grid.iterations;
    }
    spec.validate(false);
    specs.push_back(std::move(spec));
  }
  return specs;
}

void cmd_gen_data(const ExperimentConfig& config) {
  const fs::path data_dir =
      ensure_dir(fs::path(config.output.directory) / "data");
  Rng rng(config.data.seed);
  std::vector<Subject> subjects;
  for (int i = 0; i < config.data.n_subjects; ++i) {
    const uint64_t sub_seed = rng.derive();
    Phantom phantom = generate_phantom(sub_seed, config.data.extent);
    Subject s;
    s.id = subject_name(i);
    s.volume = standardize(phantom.volume);
    s.labels = std::move(phantom.labels);
    subjects.push_back(std::move(s));
  }
  const Dataset split =
      split_dataset(subjects, config.data.test_fraction, config.data.seed);
  std::map<std::string, std::string> membership;
  for (const Subject& s : split.train) membership[s.id] = "train";
  for (const Subject& s : split.test) membership[s.id] = "test";

  nlohmann::json manifest;
  manifest["seed"] = config.data.seed;
  manifest["extent"] = config.data.extent;
  manifest["n_subjects"] = config.data.n_subjects;
  manifest["test_fraction"] = config.data.test_fraction;
  manifest["subjects"] = nlohmann::json::array();
  for (const Subject& s : subjects) {
    save_volume(s.volume, (data_dir / (s.id + ".vol")).string());
    save_labels(s.labels, (data_dir / (s.id + ".lab")).string());
    manifest["subjects"].push_back({{"id", s.id},
                                    {"volume", s.id + ".vol"},
                                    {"labels", s.id + ".lab"},
                                    {"split", membership.at(s.id)}});
  }
  std::ofstream out(data_dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write manifest in " + data_dir.string());
  out << manifest.dump(2) << "\n";
  std::cout << "wrote " << subjects.size() << " subjects ("
            << split.train.size() << " train, " << split.test.size()
            << " test) to " << data_dir.string() << "\n";
}

void cmd_train(const ExperimentConfig& config) {
  const fs::path out_dir = ensure_dir(config.output.directory);
  const Dataset dataset = build_dataset(config.data);
  const std::string& kind = config.defense.kind;
  auto save = [&](const SegModel& model, const TrainLog& log,
                  const std::string& model_name,
                  const std::string& log_name) {
    model.save_checkpoint((out_dir / model_name).string());
    log.save_csv((out_dir / log_name).string());
    std::cout << "wrote " << (out_dir / model_name).string() << "\n";
  };
  if (kind == "none") {
    auto [model, log] = train_baseline(config.model, dataset, config.train);
    save(model, log, "model_baseline.ckpt", "train_log.csv");
  } else if (kind == "distillation") {
    const TrainOptions opts =
        distillation_schedule(config.defense.temperature, config.train);
    DistillationResult r = train_distilled(
        config.model, dataset, config.defense.temperature, opts);
    save(r.teacher, r.teacher_log, "model_distilled_teacher.ckpt",
         "train_log_teacher.csv");
    save(r.student, r.student_log, "model_distilled_student.ckpt",
         "train_log_student.csv");
  } else if (kind == "adversarial") {
    auto [model, log] =
        adversarial_train(config.model, dataset, config.defense.epsilon,
                          config.defense.mix_alpha, config.train);
    save(model, log, "model_advtrain.ckpt", "train_log.csv");
  } else if (kind == "augmentation") {
    auto [model, log] = augmentation_train(config.model, dataset,
                                           config.defense.radius, config.train);
    save(model, log, "model_augment.ckpt", "train_log.csv");
  } else {
    throw ConfigError("unknown defense kind: " + kind);
  }
}

void cmd_attack(const ExperimentConfig& config, const std::string& checkpoint,
                int subject_index) {
  const fs::path eval_dir =
      ensure_dir(fs::path(config.output.directory) / "eval");
  const Dataset dataset = build_dataset(config.data);
  if (subject_index < 0 ||
      subject_index >= static_cast<int>(dataset.test.size())) {
    throw ConfigError("subject index " + std::to_string(subject_index) +
                      " outside test set of size " +
                      std::to_string(dataset.test.size()));
  }
  const Subject& subject = dataset.test[static_cast<size_t>(subject_index)];
  const SegModel model = load_model(checkpoint);

  AttackSpec spec;
  spec.method = parse_attack_method(config.attack_grid.method);
  if (spec.method == AttackMethod::kFgsm) {
    spec.epsilon = config.attack_grid.single_epsilon;
    spec.steps = 1;
  } else {
    spec.epsilon = config.attack_grid.alpha;
    spec.steps = config.attack_grid.iterations;
  }
  if (spec.method == AttackMethod::kTiFgsm) {
    spec.target = uniform_target(
        subject.labels.shape,
        static_cast<uint8_t>(config.attack_grid.target_label));
  }
  spec.validate();

  const Tensor truth = one_hot(subject.labels);
  const AdversarialResult result =
      run_attack(model, subject.volume, truth, spec);
  const QualityReport quality =
      quality_report(subject.volume, result.adversarial_volume);
  const RegionDiceTriple clean_dice = subject_region_dice(model, subject);
  const LabelMap attacked_pred =
      predict_labels(model, result.adversarial_volume);
  const RegionDiceTriple attacked_dice =
      region_dice_triple(attacked_pred, subject.labels);

  const fs::path adv_path =
      eval_dir / ("adv_" + std::string(attack_method_name(spec.method)) + "_" +
                  subject.id + ".vol");
  save_volume(result.adversarial_volume, adv_path.string());

  std::cout << std::setprecision(6) << "subject " << subject.id << "  method "
            << attack_method_name(spec.method) << "  step_epsilon "
            << spec.epsilon << "  steps " << spec.steps << "  budget "
            << result.budget_used << "\n"
            << "psnr_db " << quality.psnr_db << "  ssim " << quality.ssim
            << "  rmse " << quality.rmse << "\n"
            << "dice clean     whole " << clean_dice.whole << "  core "
            << clean_dice.core << "  enh " << clean_dice.enh << "\n"
            << "dice attacked  whole " << attacked_dice.whole << "  core "
            << attacked_dice.core << "  enh " << attacked_dice.enh << "\n"
            << "wrote " << adv_path.string() << "\n";
}

void cmd_evaluate(const ExperimentConfig& config,
                  const std::vector<std::string>& checkpoints) {
  if (checkpoints.empty()) {
    throw ConfigError("evaluate needs at least one --checkpoint");
  }
  const fs::path eval_dir =
      ensure_dir(fs::path(config.output.directory) / "eval");
  const Dataset dataset = build_dataset(config.data);
  const bool sweep = config.attack_grid.sweep;

  std::vector<std::pair<std::string, RobustnessReport>> reports;
  for (const std::string& path : checkpoints) {
    const SegModel model = load_model(path);
    const uint8_t fill = static_cast<uint8_t>(config.attack_grid.target_label);
    RobustnessReport report =
        sweep ? iteration_sweep(model, dataset.test,
                                parse_attack_method(config.attack_grid.method),
                                config.attack_grid.alpha,
                                config.attack_grid.iterations, fill)
              : evaluate_robustness(model, dataset.test,
                                    build_attack_specs(config.attack_grid),
                                    fill);
    const std::string label = checkpoint_stem(path);
    report.save_records_csv((eval_dir / (label + "_records.csv")).string());
    report.save_aggregates_csv(
        (eval_dir / (label + "_aggregates.csv")).string());
    std::cout << "evaluated " << label << " over "
              << report.conditions.size() << " conditions x "
              << dataset.test.size() << " subjects\n";
    reports.emplace_back(label, std::move(report));
  }
  write_region_charts(eval_dir, reports, sweep);
  std::cout << "wrote curves under " << eval_dir.string() << "\n";
}

void cmd_report(const ExperimentConfig& config) {
  const fs::path eval_dir = fs::path(config.output.directory) / "eval";
  if (!fs::is_directory(eval_dir)) {
    throw IoError("no evaluation directory at " + eval_dir.string() +
                  " (run evaluate first)");
  }
  std::vector<std::pair<std::string, std::vector<AggregateCsvRow>>> models;
  for (const fs::directory_entry& entry : fs::directory_iterator(eval_dir)) {
    const std::string name = entry.path().filename().string();
    const std::string suffix = "_aggregates.csv";
    if (name.size() <= suffix.size() ||
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0)
      continue;
    models.emplace_back(name.substr(0, name.size() - suffix.size()),
                        read_aggregates_csv(entry.path()));
  }
  if (models.empty()) {
    throw IoError("no *_aggregates.csv under " + eval_dir.string());
  }
  std::sort(models.begin(), models.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  // Sweep reports have a per-iteration condition ladder at one epsilon.
  const bool sweep = !models.front().second.empty() &&
                     models.front().second.back().condition.find("_n") !=
                         std::string::npos &&
                     models.front().second.back().condition.find("eps") ==
                         std::string::npos;

  std::cout << std::left << std::setw(26) << "model" << std::setw(22)
            << "condition" << std::setw(17) << "region" << std::right
            << std::setw(9) << "mean" << std::setw(9) << "sd" << std::setw(12)
            << "p_adj" << "\n";
  std::vector<std::pair<std::string, RobustnessReport>> charts;
  for (const auto& [label, rows] : models) {
    RobustnessReport report;
    for (const AggregateCsvRow& row : rows) {
      AggregateRow out;
      out.condition = row.condition;
      out.epsilon = row.epsilon;
      out.iterations = row.iterations;
      out.region = row.region;
      out.mean = row.mean;
      out.sd = row.sd;
      out.p_raw = row.p_raw;
      out.p_adj = row.p_adj;
      report.aggregates.push_back(std::move(out));
      std::ostringstream p;
      if (row.p_adj) {
        p << std::setprecision(3) << *row.p_adj
          << (*row.p_adj < 0.05 ? " *" : "");
      } else {
        p << "-";
      }
      std::cout << std::left << std::setw(26) << label << std::setw(22)
                << row.condition << std::setw(17) << row.region << std::right
                << std::setw(9) << std::fixed << std::setprecision(4)
                << row.mean << std::setw(9) << row.sd << std::setw(12)
                << p.str() << "\n";
      std::cout.unsetf(std::ios::fixed);
    }
    charts.emplace_back(label, std::move(report));
  }
  write_region_charts(eval_dir, charts, sweep);
  std::cout << "rewrote curves under " << eval_dir.string() << "\n";
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Gradient-sign attacks and defenses for a 3D segmentation "
               "network on synthetic phantoms"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::string> out_override;
  std::optional<uint64_t> seed_override;
  app.add_option("--config", config_path, "experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  app.add_option("--out", out_override, "override output.directory");
  app.add_option("--seed", seed_override, "override data.seed and train.seed");

  CLI::App* gen = app.add_subcommand("gen-data", "write phantom dataset files");
  CLI::App* train = app.add_subcommand(
      "train", "train the configured model/defense, write checkpoints");
  CLI::App* attack = app.add_subcommand(
      "attack", "attack one test subject, write the adversarial volume");
  std::string attack_checkpoint;
  int subject_index = 0;
  attack->add_option("--checkpoint", attack_checkpoint, "model checkpoint")
      ->required();
  attack->add_option("--subject", subject_index, "test-subject index");
  CLI::App* evaluate = app.add_subcommand(
      "evaluate", "attack grid over the test set, write CSVs and curves");
  std::vector<std::string> eval_checkpoints;
  evaluate
      ->add_option("--checkpoint", eval_checkpoints,
                   "model checkpoint (repeatable)")
      ->required();
  CLI::App* report_cmd = app.add_subcommand(
      "report", "summarize stored evaluation CSVs, rewrite curves");
  // accept the shared options on either side of the subcommand name
  for (CLI::App* sub : {gen, train, attack, evaluate, report_cmd}) {
    sub->fallthrough();
  }

  try {
    app.parse(argc, const_cast<char**>(argv));
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    ExperimentConfig config = ExperimentConfig::load(config_path);
    if (out_override) config.output.directory = *out_override;
    if (seed_override) {
      config.data.seed = *seed_override;
      config.train.seed = *seed_override;
    }
    config.validate();
    const fs::path out_dir = ensure_dir(config.output.directory);
    config.save((out_dir / "effective_config.json").string());

    if (gen->parsed()) {
      cmd_gen_data(config);
    } else if (train->parsed()) {
      cmd_train(config);
    } else if (attack->parsed()) {
      cmd_attack(config, attack_checkpoint, subject_index);
    } else if (evaluate->parsed()) {
      cmd_evaluate(config, eval_checkpoints);
    } else if (report_cmd->parsed()) {
      cmd_report(config);
    }
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace segrobust
