#include "prunelab/sgd.hpp"

namespace prunelab {

void SgdOptimizer::step(std::vector<Tensor>& params) {
  for (Tensor& p : params) {
    check(p.has_grad(), "sgd_step: parameter '",
          p.name().empty() ? "<unnamed>" : p.name(), "' has no gradient");
  }
  for (Tensor& p : params) {
    auto& vel = velocity_[p.id()];
    if (vel.empty()) vel.assign(static_cast<size_t>(p.numel()), 0.0f);
    auto w = p.values_mut();
    auto g = p.grad_mut();
    for (size_t i = 0; i < w.size(); ++i) {
      const float grad = g[i] + weight_decay_ * w[i];
      vel[i] = momentum_ * vel[i] + grad;
      w[i] -= lr_ * vel[i];
    }
    p.zero_grad();
  }
}

const std::vector<float>* SgdOptimizer::velocity(const Tensor& param) const {
  auto it = velocity_.find(param.id());
  return it == velocity_.end() ? nullptr : &it->second;
}

void SgdOptimizer::set_velocity(const Tensor& param, std::vector<float> v) {
  velocity_[param.id()] = std::move(v);
}

}  // namespace prunelab
