#include "segrobust/optim.hpp"

#include <cmath>

#include "segrobust/error.hpp"

namespace segrobust {

Adam::Adam(std::vector<Tensor> params, Options opts)
    : params_(std::move(params)), opts_(opts) {
  if (!(opts_.lr > 0)) throw ConfigError("Adam learning rate must be positive");
  if (!(opts_.beta1 >= 0 && opts_.beta1 < 1) ||
      !(opts_.beta2 >= 0 && opts_.beta2 < 1)) {
    throw ConfigError("Adam betas must lie in [0,1)");
  }
  if (!(opts_.eps > 0)) throw ConfigError("Adam eps must be positive");
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    const size_t n = static_cast<size_t>(params_[i].numel());
    m_[i].assign(n, 0.0);
    v_[i].assign(n, 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    const std::vector<double>& g = p.grad();
    std::vector<double>& value = p.mutable_data();
    std::vector<double>& m = m_[i];
    std::vector<double>& v = v_[i];
    for (size_t j = 0; j < g.size(); ++j) {
      m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * g[j];
      v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      value[j] -= opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

}  // namespace segrobust
