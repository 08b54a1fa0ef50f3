#include "segrobust/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "segrobust/data.hpp"
#include "segrobust/error.hpp"
#include "segrobust/losses.hpp"

namespace segrobust {

const char* attack_method_name(AttackMethod m) {
  switch (m) {
    case AttackMethod::kFgsm: return "fgsm";
    case AttackMethod::kIFgsm: return "ifgsm";
    case AttackMethod::kTiFgsm: return "tifgsm";
  }
  return "?";
}

AttackMethod parse_attack_method(const std::string& name) {
  if (name == "fgsm") return AttackMethod::kFgsm;
  if (name == "ifgsm") return AttackMethod::kIFgsm;
  if (name == "tifgsm") return AttackMethod::kTiFgsm;
  throw ConfigError("unknown attack method '" + name +
                    "' (expected fgsm | ifgsm | tifgsm)");
}

void AttackSpec::validate(bool require_target) const {
  if (epsilon < 0) throw ConfigError("attack epsilon must be >= 0");
  if (steps < 1) throw ConfigError("attack steps must be >= 1");
  if (method == AttackMethod::kFgsm && steps != 1) {
    throw ConfigError("fgsm is single-step; use ifgsm for steps > 1");
  }
  if (require_target && method == AttackMethod::kTiFgsm &&
      !target.has_value()) {
    throw ConfigError("tifgsm requires a target label map");
  }
}

AdversarialResult iterate_signed_steps(
    const Tensor& input, double eps_step, int steps, double direction,
    bool clip_to_input_range,
    const std::function<Tensor(const Tensor&)>& loss_fn,
    const std::function<void(int, const Tensor&)>& on_step) {
  if (eps_step < 0) throw ConfigError("attack step size must be >= 0");
  if (steps < 1) throw ConfigError("attack steps must be >= 1");

  double lo = 0.0, hi = 0.0;
  if (clip_to_input_range) {
    const auto [mn, mx] =
        std::minmax_element(input.data().begin(), input.data().end());
    lo = *mn;
    hi = *mx;
  }

  AdversarialResult result;
  Tensor x = input.clone_detached();
  for (int step = 0; step < steps; ++step) {
    x.set_requires_grad(true);
    Tensor loss = loss_fn(x);
    backward(loss);
    const std::vector<double>& g = x.grad();

    Tensor next = x.clone_detached();
    double* xv = next.mutable_data().data();
    for (size_t i = 0; i < g.size(); ++i) {
      const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
      xv[i] += direction * eps_step * s;
      if (clip_to_input_range) xv[i] = std::clamp(xv[i], lo, hi);
    }
    x = std::move(next);

    {
      NoGradGuard eval;
      result.per_step_loss.push_back(loss_fn(x).item());
    }
    if (on_step) on_step(step + 1, x);
  }
  result.adversarial_volume = std::move(x);
  double linf = 0.0;
  for (size_t i = 0; i < input.data().size(); ++i) {
    linf = std::max(linf,
                    std::fabs(result.adversarial_volume.data()[i] -
                              input.data()[i]));
  }
  result.budget_used = linf;
  return result;
}

namespace {

// Attack steps need only input gradients; freezing the parameters for
// the duration skips their (useless) gradient accumulation.
class ScopedParamFreeze {
 public:
  explicit ScopedParamFreeze(const SegModel& model)
      : params_(model.parameters()) {
    for (Tensor& p : params_) {
      prev_.push_back(p.requires_grad());
      p.set_requires_grad(false);
    }
  }
  ~ScopedParamFreeze() {
    for (size_t i = 0; i < params_.size(); ++i) {
      params_[i].set_requires_grad(prev_[i]);
    }
  }
  ScopedParamFreeze(const ScopedParamFreeze&) = delete;
  ScopedParamFreeze& operator=(const ScopedParamFreeze&) = delete;

 private:
  std::vector<Tensor> params_;
  std::vector<bool> prev_;
};

void check_attack_shapes(const SegModel& model, const Tensor& input,
                         const Tensor& one_hot_truth) {
  if (input.rank() != 4) {
    throw ShapeError("attack input must be [C,D,H,W], got " +
                     shape_to_string(input.shape()));
  }
  const Shape expect = {model.config().num_classes, input.extent(1),
                        input.extent(2), input.extent(3)};
  if (one_hot_truth.shape() != expect) {
    throw ShapeError("attack labels must be " + shape_to_string(expect) +
                     ", got " + shape_to_string(one_hot_truth.shape()));
  }
}

}  // namespace

AdversarialResult fgsm(const SegModel& model, const Tensor& input,
                       const Tensor& one_hot_truth, double epsilon,
                       bool clip_to_input_range) {
  return ifgsm(model, input, one_hot_truth, epsilon, 1, clip_to_input_range);
}

AdversarialResult ifgsm(const SegModel& model, const Tensor& input,
                        const Tensor& one_hot_truth, double alpha, int steps,
                        bool clip_to_input_range) {
  check_attack_shapes(model, input, one_hot_truth);
  ScopedParamFreeze freeze(model);
  return iterate_signed_steps(
      input, alpha, steps, +1.0, clip_to_input_range,
      [&](const Tensor& x) {
        return dice_loss(model.forward(x, /*training=*/false), one_hot_truth);
      });
}

AdversarialResult tifgsm(const SegModel& model, const Tensor& input,
                         const LabelMap& target, double alpha, int steps,
                         bool clip_to_input_range, bool ascend) {
  const Tensor target_hot = one_hot(target, model.config().num_classes);
  check_attack_shapes(model, input, target_hot);
  ScopedParamFreeze freeze(model);
  return iterate_signed_steps(
      input, alpha, steps, ascend ? +1.0 : -1.0, clip_to_input_range,
      [&](const Tensor& x) {
        return dice_loss(model.forward(x, /*training=*/false), target_hot);
      });
}

AttackTrajectory ifgsm_trajectory(const SegModel& model, const Tensor& input,
                                  const Tensor& one_hot_truth, double alpha,
                                  int steps) {
  check_attack_shapes(model, input, one_hot_truth);
  ScopedParamFreeze freeze(model);
  AttackTrajectory traj;
  AdversarialResult result = iterate_signed_steps(
      input, alpha, steps, +1.0, /*clip_to_input_range=*/false,
      [&](const Tensor& x) {
        return dice_loss(model.forward(x, /*training=*/false), one_hot_truth);
      },
      [&](int, const Tensor& x) { traj.iterates.push_back(x); });
  traj.per_step_loss = std::move(result.per_step_loss);
  return traj;
}

AttackTrajectory tifgsm_trajectory(const SegModel& model, const Tensor& input,
                                   const LabelMap& target, double alpha,
                                   int steps, bool ascend) {
  const Tensor target_hot = one_hot(target, model.config().num_classes);
  check_attack_shapes(model, input, target_hot);
  ScopedParamFreeze freeze(model);
  AttackTrajectory traj;
  AdversarialResult result = iterate_signed_steps(
      input, alpha, steps, ascend ? +1.0 : -1.0, /*clip_to_input_range=*/false,
      [&](const Tensor& x) {
        return dice_loss(model.forward(x, /*training=*/false), target_hot);
      },
      [&](int, const Tensor& x) { traj.iterates.push_back(x); });
  traj.per_step_loss = std::move(result.per_step_loss);
  return traj;
}

LabelMap uniform_target(const Shape& spatial_shape, uint8_t code) {
  if (spatial_shape.size() != 3) {
    throw ShapeError("target shape must be [D,H,W], got " +
                     shape_to_string(spatial_shape));
  }
  label_code_to_index(code);
  LabelMap target;
  target.shape = spatial_shape;
  target.codes.assign(static_cast<size_t>(target.numel()), code);
  return target;
}

AdversarialResult run_attack(const SegModel& model, const Tensor& input,
                             const Tensor& one_hot_truth,
                             const AttackSpec& spec) {
  spec.validate();
  switch (spec.method) {
    case AttackMethod::kFgsm:
      return fgsm(model, input, one_hot_truth, spec.epsilon,
                  spec.clip_to_input_range);
    case AttackMethod::kIFgsm:
      return ifgsm(model, input, one_hot_truth, spec.epsilon, spec.steps,
                   spec.clip_to_input_range);
    case AttackMethod::kTiFgsm:
      return tifgsm(model, input, *spec.target, spec.epsilon, spec.steps,
                    spec.clip_to_input_range, spec.targeted_ascend);
  }
  throw ConfigError("unreachable attack method");
}

double mean_abs_input_gradient(const SegModel& model, const Tensor& input,
                               const Tensor& one_hot_truth) {
  check_attack_shapes(model, input, one_hot_truth);
  ScopedParamFreeze freeze(model);
  Tensor x = input.clone_detached();
  x.set_requires_grad(true);
  Tensor loss = dice_loss(model.forward(x, /*training=*/false), one_hot_truth);
  backward(loss);
  const std::vector<double>& g = x.grad();
  double acc = 0.0;
  for (double v : g) acc += std::fabs(v);
  return acc / static_cast<double>(g.size());
}

}  // namespace segrobust
