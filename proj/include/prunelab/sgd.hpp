#pragma once

#include <unordered_map>
#include <vector>

#include "prunelab/tensor.hpp"

namespace prunelab {

/// Classic momentum SGD: v <- mu*v + (g + wd*w), w <- w - lr*v.
/// Velocity is kept per parameter across steps; gradients are zeroed after
/// each step.
class SgdOptimizer {
 public:
  SgdOptimizer(float lr, float momentum, float weight_decay)
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}

  void set_lr(float lr) { lr_ = lr; }
  float lr() const { return lr_; }

  /// Updates every parameter in place. A parameter without a populated
  /// gradient is an error naming it.
  void step(std::vector<Tensor>& params);

  /// Velocity buffer for one parameter (empty if the parameter has not been
  /// stepped yet). Exposed for checkpointing mid-training state.
  const std::vector<float>* velocity(const Tensor& param) const;
  void set_velocity(const Tensor& param, std::vector<float> v);

 private:
  float lr_;
  float momentum_;
  float weight_decay_;
  std::unordered_map<const void*, std::vector<float>> velocity_;
};

}  // namespace prunelab
