#include "segrobust/losses.hpp"

#include <cmath>
#include <string>

#include "segrobust/error.hpp"

namespace segrobust {

namespace {

std::vector<int> resolve_foreground(const DiceConfig& cfg, int64_t n_classes) {
  std::vector<int> fg = cfg.foreground_classes;
  if (fg.empty()) {
    for (int i = 1; i < n_classes; ++i) fg.push_back(i);
  }
  if (fg.empty()) throw ConfigError("dice: foreground class set is empty");
  for (int i : fg) {
    if (i < 0 || i >= n_classes) {
      throw ConfigError("dice: foreground class " + std::to_string(i) +
                        " outside [0," + std::to_string(n_classes) + ")");
    }
  }
  return fg;
}

Tensor smoothed_dice(const Tensor& pred, const Tensor& target,
                     const DiceConfig& cfg) {
  if (pred.rank() < 2) {
    throw ShapeError("dice: prediction must have a leading class axis, got " +
                     shape_to_string(pred.shape()));
  }
  if (pred.shape() != target.shape()) {
    throw ShapeError("dice: shape mismatch " + shape_to_string(pred.shape()) +
                     " vs " + shape_to_string(target.shape()));
  }
  if (!(cfg.gamma > 0)) throw ConfigError("dice: gamma must be positive");
  const int64_t n_classes = pred.extent(0);
  const std::vector<int> fg = resolve_foreground(cfg, n_classes);

  Tensor inter = channel_sums(mul(pred, target));
  Tensor denom =
      add_scalar(add(channel_sums(pred), channel_sums(target)), cfg.gamma);
  Tensor ratio = div(add_scalar(mul_scalar(inter, 2.0), cfg.gamma), denom);

  std::vector<double> mask(static_cast<size_t>(n_classes), 0.0);
  for (int i : fg) mask[static_cast<size_t>(i)] = 1.0;
  Tensor selected = sum(mul(ratio, Tensor::from_data({n_classes}, mask)));
  const double prefactor =
      cfg.prefactor == DicePrefactor::kNormalized
          ? 1.0 / static_cast<double>(fg.size())
          : 1.0 / static_cast<double>(n_classes);
  return mul_scalar(selected, prefactor);
}

}  // namespace

Tensor dice_coefficient(const Tensor& pred, const Tensor& target,
                        const DiceConfig& cfg) {
  return smoothed_dice(pred, target, cfg);
}

Tensor dice_loss(const Tensor& pred, const Tensor& target,
                 const DiceConfig& cfg) {
  return sub(Tensor::scalar(1.0), smoothed_dice(pred, target, cfg));
}

Tensor distillation_dice_loss(const Tensor& student_pred,
                              const Tensor& teacher_soft,
                              const DiceConfig& cfg) {
  if (student_pred.shape() != teacher_soft.shape()) {
    throw ShapeError("distillation: shape mismatch " +
                     shape_to_string(student_pred.shape()) + " vs " +
                     shape_to_string(teacher_soft.shape()));
  }
  const int64_t n_classes = teacher_soft.extent(0);
  const int64_t vol = teacher_soft.numel() / n_classes;
  const double* t = teacher_soft.data().data();
  for (int64_t s = 0; s < vol; ++s) {
    double row = 0.0;
    for (int64_t c = 0; c < n_classes; ++c) row += t[c * vol + s];
    if (std::fabs(row - 1.0) > 1e-6) {
      throw Error("distillation: teacher soft labels are not normalized (row "
                  "sum " +
                  std::to_string(row) + " at voxel " + std::to_string(s) + ")");
    }
  }
  const Tensor teacher = teacher_soft.requires_grad()
                             ? teacher_soft.clone_detached()
                             : teacher_soft;
  return sub(Tensor::scalar(1.0), smoothed_dice(student_pred, teacher, cfg));
}

}  // namespace segrobust
