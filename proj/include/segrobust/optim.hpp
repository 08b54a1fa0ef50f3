#pragma once

#include <vector>

#include "segrobust/tensor.hpp"

namespace segrobust {

// Adam with bias-corrected moment estimates. State slots are keyed by the
// position of each parameter in the list passed at construction.
class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam(std::vector<Tensor> params, Options opts);

  // Applies one update from the gradients currently stored on the
  // parameters; parameters without a populated gradient are skipped
  // (their moments still decay bias-correction via the shared step count).
  void step();
  void zero_grad();

  double lr() const { return opts_.lr; }
  void set_lr(double lr) { opts_.lr = lr; }
  int64_t steps_taken() const { return t_; }

 private:
  std::vector<Tensor> params_;
  Options opts_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  int64_t t_ = 0;
};

}  // namespace segrobust
