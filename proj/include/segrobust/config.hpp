#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "segrobust/defenses.hpp"
#include "segrobust/unet.hpp"

namespace segrobust {

struct DataConfig {
  uint64_t seed = 7;
  int n_subjects = 20;
  int64_t extent = 32;
  double test_fraction = 0.2;
};

struct DefenseConfig {
  std::string kind = "none";  // none | distillation | adversarial | augmentation
  double temperature = 500.0;
  double epsilon = 0.05;
  double mix_alpha = 0.5;
  double radius = 0.01;
};

struct AttackGridConfig {
  std::string method = "fgsm";  // fgsm | ifgsm | tifgsm
  // For fgsm each entry is the attack epsilon; for iterative methods it
  // is the total budget spread over `iterations` equal steps.
  std::vector<double> epsilons = {0.0,  0.01, 0.02, 0.03, 0.04, 0.05,
                                  0.06, 0.07, 0.08, 0.09, 0.10};
  double alpha = 0.005;  // per-step size for single attacks / sweeps
  int iterations = 10;
  double single_epsilon = 0.05;  // one-shot fgsm budget for `attack`
  int target_label = 1;          // targeted-attack fill label
  bool sweep = false;  // evaluate: iterate 1..iterations at fixed alpha
};

struct OutputConfig {
  std::string directory = "out";
};

// Whole-experiment configuration: strict JSON with unknown-key
// rejection; missing keys take the defaults above.
struct ExperimentConfig {
  DataConfig data;
  UNetConfig model;
  TrainOptions train;
  DefenseConfig defense;
  AttackGridConfig attack_grid;
  OutputConfig output;

  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);
  nlohmann::json to_json() const;  // every default materialized
  void save(const std::string& path) const;
  void validate() const;
};

}  // namespace segrobust
