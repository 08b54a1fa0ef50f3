#include "segrobust/infer.hpp"

namespace segrobust {

LabelMap predict_labels(const SegModel& model, const Tensor& volume) {
  NoGradGuard eval;
  return argmax_labels(model.forward(volume, /*training=*/false));
}

RegionDiceTriple region_dice_triple(const LabelMap& pred,
                                    const LabelMap& truth) {
  RegionDiceTriple t;
  t.whole = region_dice(pred, truth, Region::kWholeTumor);
  t.core = region_dice(pred, truth, Region::kTumorCore);
  t.enh = region_dice(pred, truth, Region::kEnhancingTumor);
  return t;
}

RegionDiceTriple subject_region_dice(const SegModel& model,
                                     const Subject& subject) {
  return region_dice_triple(predict_labels(model, subject.volume),
                            subject.labels);
}

RegionDiceTriple mean_region_dice(const SegModel& model,
                                  const std::vector<Subject>& subjects) {
  RegionDiceTriple acc;
  if (subjects.empty()) return acc;
  for (const Subject& s : subjects) {
    const RegionDiceTriple t = subject_region_dice(model, s);
    acc.whole += t.whole;
    acc.core += t.core;
    acc.enh += t.enh;
  }
  const double n = static_cast<double>(subjects.size());
  acc.whole /= n;
  acc.core /= n;
  acc.enh /= n;
  return acc;
}

}  // namespace segrobust
