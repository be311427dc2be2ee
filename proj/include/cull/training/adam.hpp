#pragma once

#include <map>
#include <string>

#include "cull/numerics/tensor.hpp"

namespace cull {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a named set of tensors.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// Applies one update with learning rate `lr`. Gradients whose names are
  /// absent from `params` are ignored; missing gradients count as zero.
  void step(std::map<std::string, Tensor*>& params, const std::map<std::string, Tensor>& grads, double lr);

  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::map<std::string, Tensor> m_;
  std::map<std::string, Tensor> v_;
};

}  // namespace cull
