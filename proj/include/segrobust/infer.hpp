#pragma once

#include <vector>

#include "segrobust/data.hpp"
#include "segrobust/labelmap.hpp"
#include "segrobust/metrics.hpp"
#include "segrobust/unet.hpp"

namespace segrobust {

// Eval-mode forward plus per-voxel argmax, without recording gradients.
LabelMap predict_labels(const SegModel& model, const Tensor& volume);

struct RegionDiceTriple {
  double whole = 0.0;
  double core = 0.0;
  double enh = 0.0;

  double by_region(Region r) const {
    switch (r) {
      case Region::kWholeTumor: return whole;
      case Region::kTumorCore: return core;
      case Region::kEnhancingTumor: return enh;
    }
    return 0.0;
  }
};

RegionDiceTriple region_dice_triple(const LabelMap& pred,
                                    const LabelMap& truth);

// Dice of the model's prediction against a subject's ground truth.
RegionDiceTriple subject_region_dice(const SegModel& model,
                                     const Subject& subject);

// Mean over subjects (empty list -> zeros).
RegionDiceTriple mean_region_dice(const SegModel& model,
                                  const std::vector<Subject>& subjects);

}  // namespace segrobust
