#pragma once

#include <cstdint>
#include <vector>

#include "segrobust/tensor.hpp"

namespace segrobust {

// Segmentation classes use the external label codes {0,1,2,4}
// (background, necrotic core, edema, enhancing tumor), stored densely
// as internal channel indices {0,1,2,3} where tensors are involved.
inline constexpr int kNumClasses = 4;
inline constexpr uint8_t kLabelCodes[kNumClasses] = {0, 1, 2, 4};

int label_code_to_index(uint8_t code);
uint8_t label_index_to_code(int index);

// Dense [D,H,W] map of external label codes.
struct LabelMap {
  Shape shape;  // [D,H,W]
  std::vector<uint8_t> codes;

  int64_t numel() const { return shape_numel(shape); }
  void validate() const;  // shape/codes consistency, known codes only
};

}  // namespace segrobust
