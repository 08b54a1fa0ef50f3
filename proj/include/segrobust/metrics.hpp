#pragma once

#include <string>

#include "segrobust/labelmap.hpp"
#include "segrobust/tensor.hpp"

namespace segrobust {

// Composite tumor regions over external label codes.
enum class Region { kWholeTumor, kTumorCore, kEnhancingTumor };

inline constexpr Region kRegions[3] = {Region::kWholeTumor, Region::kTumorCore,
                                       Region::kEnhancingTumor};

const char* region_name(Region region);
bool region_contains(Region region, uint8_t code);

// Hard binary Dice 2|A∩B|/(|A|+|B|) on the region masks.
// Both masks empty -> 1.0 (agreement on absence).
double region_dice(const LabelMap& pred, const LabelMap& truth, Region region);

constexpr double kPsnrCapDb = 99.0;

// 20·log10(max|reference| / RMSE); identical images -> kPsnrCapDb.
double psnr(const Tensor& reference, const Tensor& test);

// Mean local SSIM over all [C,D,H,W] channels: 3D Gaussian window
// (size 7, sigma 1.5), K1=0.01, K2=0.03, per-channel dynamic range
// max−min of the reference; averaged over fully covered window positions.
double ssim(const Tensor& reference, const Tensor& test);

double rmse(const Tensor& reference, const Tensor& test);

struct QualityReport {
  double psnr_db = 0.0;
  double ssim = 0.0;
  double rmse = 0.0;
};

QualityReport quality_report(const Tensor& reference, const Tensor& test);

}  // namespace segrobust
