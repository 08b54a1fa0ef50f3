#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "segrobust/tensor.hpp"

namespace segrobust {

struct UNetConfig {
  int input_channels = 4;
  int num_classes = 4;
  int depth = 3;        // number of stride-2 downsamplings
  int base_width = 4;   // channels at the top level
  double dropout_rate = 0.3;
  double temperature = 1.0;
  double leaky_slope = 0.01;

  void validate() const;
  int width_at(int level) const { return base_width << level; }
};

// conv (optionally strided) -> instance norm -> leaky relu
struct ConvBlock {
  Tensor kernel;  // [Co,Ci,k,k,k]
  Tensor gamma;   // [Co]
  Tensor beta;    // [Co]
  int stride = 1;
};

// block -> (optional channel dropout) -> block, plus a 1x1x1
// channel-matching projection of the block input.
struct ResBlock {
  ConvBlock first;
  ConvBlock second;
  Tensor projection;  // [Co,Ci,1,1,1]
  bool dropout_between = false;
};

struct DecoderStage {
  ConvBlock after_up;      // 3^3, halves channels after upsampling
  ConvBlock after_concat;  // 3^3, fuses the skip connection
  ConvBlock refine;        // 1^3
};

// Residual 3D U-Net with temperature softmax head.
class SegModel {
 public:
  SegModel() = default;
  static SegModel build(const UNetConfig& config, uint64_t seed);

  // Class probabilities [N,D,H,W]; spatial extents must divide 2^depth.
  // dropout_seed is consumed only when training==true.
  Tensor forward(const Tensor& input, bool training = false,
                 uint64_t dropout_seed = 0) const;

  // Raw head output before the softmax (same shape as forward).
  Tensor logits(const Tensor& input, bool training = false,
                uint64_t dropout_seed = 0) const;

  const UNetConfig& config() const { return config_; }
  void set_temperature(double t);
  uint64_t init_seed() const { return init_seed_; }

  std::vector<Tensor> parameters() const;
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  int64_t parameter_count() const;
  void set_parameters_require_grad(bool on);
  void zero_param_grads();

  void save_checkpoint(const std::string& path) const;
  static SegModel load_checkpoint(const std::string& path);

 private:
  UNetConfig config_;
  uint64_t init_seed_ = 0;
  std::vector<ResBlock> encoder_;       // one per level 0..depth
  std::vector<ConvBlock> downsample_;   // between consecutive levels
  std::vector<DecoderStage> decoder_;   // level depth-1 down to 0
  Tensor head_kernel_;                  // [N,width0,1,1,1]
  Tensor head_bias_;                    // [N]
};

}  // namespace segrobust
