#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "segrobust/labelmap.hpp"
#include "segrobust/tensor.hpp"
#include "segrobust/unet.hpp"

namespace segrobust {

enum class AttackMethod { kFgsm, kIFgsm, kTiFgsm };

const char* attack_method_name(AttackMethod m);
AttackMethod parse_attack_method(const std::string& name);

struct AttackSpec {
  AttackMethod method = AttackMethod::kFgsm;
  double epsilon = 0.05;  // per-step size for iterative methods
  int steps = 1;
  std::optional<LabelMap> target;  // required for tiFGSM
  bool clip_to_input_range = false;
  // The printed targeted update adds the gradient sign; the prose asks
  // for loss minimization. Descent is the default.
  bool targeted_ascend = false;

  // Grid entries may defer the tifgsm target (injected per subject).
  void validate(bool require_target = true) const;
  double total_budget() const { return epsilon * steps; }
};

struct AdversarialResult {
  Tensor adversarial_volume;
  std::vector<double> per_step_loss;  // loss after each step
  double budget_used = 0.0;
};

// Shared core: iterate x <- x + direction * eps_step * sign(grad_x loss)
// for `steps` rounds. `loss_fn` must build a differentiable scalar from
// a gradient-enabled input tensor. sign(0) == 0. `on_step`, when set,
// receives each iterate (1-based step index) right after its update.
AdversarialResult iterate_signed_steps(
    const Tensor& input, double eps_step, int steps, double direction,
    bool clip_to_input_range,
    const std::function<Tensor(const Tensor&)>& loss_fn,
    const std::function<void(int, const Tensor&)>& on_step = {});

// One signed ascent step of the Dice loss against the true labels.
AdversarialResult fgsm(const SegModel& model, const Tensor& input,
                       const Tensor& one_hot_truth, double epsilon,
                       bool clip_to_input_range = false);

// N chained signed ascent steps of step size alpha.
AdversarialResult ifgsm(const SegModel& model, const Tensor& input,
                        const Tensor& one_hot_truth, double alpha, int steps,
                        bool clip_to_input_range = false);

// N signed steps that move the Dice loss toward `target` (descent by
// default; set ascend to reproduce the printed plus sign).
AdversarialResult tifgsm(const SegModel& model, const Tensor& input,
                         const LabelMap& target, double alpha, int steps,
                         bool clip_to_input_range = false,
                         bool ascend = false);

// All intermediate iterates X_1..X_N of an iterative attack;
// iterates.back() equals the AdversarialResult volume.
struct AttackTrajectory {
  std::vector<Tensor> iterates;
  std::vector<double> per_step_loss;
};

AttackTrajectory ifgsm_trajectory(const SegModel& model, const Tensor& input,
                                  const Tensor& one_hot_truth, double alpha,
                                  int steps);

AttackTrajectory tifgsm_trajectory(const SegModel& model, const Tensor& input,
                                   const LabelMap& target, double alpha,
                                   int steps, bool ascend = false);

// Uniform target map filled with one external label code (the targeted
// attack aims at an all-necrotic-core map by default).
LabelMap uniform_target(const Shape& spatial_shape, uint8_t code = 1);

AdversarialResult run_attack(const SegModel& model, const Tensor& input,
                             const Tensor& one_hot_truth,
                             const AttackSpec& spec);

// Mean absolute input gradient of the Dice loss at the clean input —
// the gradient-masking statistic.
double mean_abs_input_gradient(const SegModel& model, const Tensor& input,
                               const Tensor& one_hot_truth);

}  // namespace segrobust
