#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "segrobust/labelmap.hpp"
#include "segrobust/rng.hpp"
#include "segrobust/tensor.hpp"

namespace segrobust {

// Channel roles of a 4-channel MR-like volume.
enum MrChannel { kT1 = 0, kT1Gd = 1, kT2 = 2, kFlair = 3 };
inline constexpr int kNumChannels = 4;

struct Subject {
  std::string id;
  Tensor volume;   // [4,D,H,W]
  LabelMap labels; // [D,H,W]
};

struct Dataset {
  std::vector<Subject> train;
  std::vector<Subject> test;
};

// Nested-ellipsoid tumor phantom: necrotic core (label 1) inside an
// enhancing rim (label 4) inside an edema shell (label 2) on background 0.
// Channel intensity profiles make the rim bright in T1Gd and the edema
// bright in FLAIR; Gaussian noise sigma is 5% of each channel's
// class-mean spread. Pure function of (seed, extent).
struct Phantom {
  Tensor volume;
  LabelMap labels;
};
Phantom generate_phantom(uint64_t seed, int64_t extent);

// Subtract the global mean, divide by the global standard deviation,
// then rescale so max |voxel| == 1 (attack budgets are then absolute).
Tensor standardize(const Tensor& volume);

// Trilinear intensity resampling and nearest-neighbor label resampling
// to a cubic target extent (half-voxel-center alignment).
Tensor resize_volume(const Tensor& volume, int64_t target_extent);
LabelMap resize_labels(const LabelMap& labels, int64_t target_extent);

// "SRTV" (float64 volume) and "SRTL" (u8 label) container files;
// little-endian, bit-exact round trips.
void save_volume(const Tensor& volume, const std::string& path);
Tensor load_volume(const std::string& path);
void save_labels(const LabelMap& labels, const std::string& path);
LabelMap load_labels(const std::string& path);

// Seeded shuffle, then partition with round(n * test_fraction) test
// subjects; both sides must end up nonempty.
Dataset split_dataset(std::vector<Subject> subjects, double test_fraction,
                      uint64_t seed);

// One-hot encoding over internal class indices -> [N,D,H,W].
Tensor one_hot(const LabelMap& labels, int num_classes = kNumClasses);

// Per-voxel argmax over channels, mapped back to external codes.
LabelMap argmax_labels(const Tensor& probs);

// Orientation-only augmentation: optional H/W transpose plus per-axis
// flips; composing these yields all axial 90-degree rotations.
struct GeoTransform {
  bool swap_hw = false;
  bool flip_d = false;
  bool flip_h = false;
  bool flip_w = false;

  bool is_identity() const {
    return !swap_hw && !flip_d && !flip_h && !flip_w;
  }
};

GeoTransform sample_transform(Rng& rng);
Tensor apply_transform(const Tensor& volume, const GeoTransform& t);
LabelMap apply_transform(const LabelMap& labels, const GeoTransform& t);

}  // namespace segrobust
