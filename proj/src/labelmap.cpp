#include "segrobust/labelmap.hpp"

#include <string>

#include "segrobust/error.hpp"

namespace segrobust {

int label_code_to_index(uint8_t code) {
  switch (code) {
    case 0: return 0;
    case 1: return 1;
    case 2: return 2;
    case 4: return 3;
    default:
      throw Error("unknown segmentation label code " + std::to_string(code));
  }
}

uint8_t label_index_to_code(int index) {
  if (index < 0 || index >= kNumClasses) {
    throw Error("label channel index out of range: " + std::to_string(index));
  }
  return kLabelCodes[index];
}

void LabelMap::validate() const {
  if (shape.size() != 3) {
    throw ShapeError("label map must be [D,H,W], got " + shape_to_string(shape));
  }
  if (static_cast<int64_t>(codes.size()) != numel()) {
    throw ShapeError("label map payload length does not match shape " +
                     shape_to_string(shape));
  }
  for (uint8_t c : codes) label_code_to_index(c);
}

}  // namespace segrobust
