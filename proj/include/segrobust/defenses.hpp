#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "segrobust/data.hpp"
#include "segrobust/unet.hpp"

namespace segrobust {

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  std::optional<double> val_dice_whole;
  std::optional<double> val_dice_core;
  std::optional<double> val_dice_enh;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  void save_csv(const std::string& path) const;
};

struct TrainOptions {
  int epochs = 100;
  double lr = 1e-4;
  uint64_t seed = 1;
  bool augment = true;    // 90-degree rotations / flips / transposes
  int val_interval = 10;  // validate every k epochs (and the last one)
};

// Plain Adam training on the smoothed Dice loss against hard labels.
std::pair<SegModel, TrainLog> train_baseline(const UNetConfig& config,
                                             const Dataset& dataset,
                                             const TrainOptions& opts);

struct DistillationResult {
  SegModel teacher;  // temperature-T head
  SegModel student;  // deployed with T = 1 head
  TrainLog teacher_log;
  TrainLog student_log;
};

// Teacher trained at temperature T on hard labels; its cached soft
// labels then supervise an identically configured student (fresh
// initialization), which is deployed with a T = 1 head.
DistillationResult train_distilled(const UNetConfig& config,
                                   const Dataset& dataset, double temperature,
                                   const TrainOptions& opts);

// High-temperature runs get a longer schedule (x4 epochs, x5 learning
// rate at T >= 500).
TrainOptions distillation_schedule(double temperature, TrainOptions base);

// Mixed objective alpha*L(clean) + (1-alpha)*L(fgsm(clean)); the
// adversarial example is regenerated from the current parameters each
// batch. alpha == 1 (or epsilon == 0) reduces to the baseline
// trajectory exactly.
std::pair<SegModel, TrainLog> adversarial_train(const UNetConfig& config,
                                                const Dataset& dataset,
                                                double epsilon,
                                                double mix_alpha,
                                                const TrainOptions& opts);

// Per batch: one step on a uniform-noise-perturbed input (radius in
// infinity norm), then one step on the clean input.
std::pair<SegModel, TrainLog> augmentation_train(const UNetConfig& config,
                                                 const Dataset& dataset,
                                                 double radius,
                                                 const TrainOptions& opts);

}  // namespace segrobust
