#pragma once

#include <vector>

#include "segrobust/tensor.hpp"

namespace segrobust {

enum class DicePrefactor {
  kNormalized,   // divide the foreground sum by |foreground_classes|
  kPaperLiteral  // divide by the total class count N
};

struct DiceConfig {
  double gamma = 1.0;
  // Empty set means "all classes except 0" resolved against the tensor.
  std::vector<int> foreground_classes;
  DicePrefactor prefactor = DicePrefactor::kNormalized;
};

// Smoothed soft Dice over class channels:
//   mean over foreground classes i of
//     (2 Σ_v p_iv t_iv + γ) / (Σ_v p_iv + Σ_v t_iv + γ)
// Differentiable w.r.t. both arguments.
Tensor dice_coefficient(const Tensor& pred, const Tensor& target,
                        const DiceConfig& cfg = {});

// 1 − dice_coefficient.
Tensor dice_loss(const Tensor& pred, const Tensor& target,
                 const DiceConfig& cfg = {});

// Same smoothed form with soft teacher targets. Teacher rows must be
// probability distributions (sum 1 within 1e-6); gradients flow only
// into student_pred.
Tensor distillation_dice_loss(const Tensor& student_pred,
                              const Tensor& teacher_soft,
                              const DiceConfig& cfg = {});

}  // namespace segrobust
