#include "cull/training/adam.hpp"

#include <cmath>

namespace cull {

void Adam::step(std::map<std::string, Tensor*>& params, const std::map<std::string, Tensor>& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const float step = static_cast<float>(lr * std::sqrt(c2) / c1);
  const float b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
  const float eps = static_cast<float>(cfg_.eps * std::sqrt(c2));
  for (auto& [name, p] : params) {
    auto g = grads.find(name);
    if (g == grads.end()) continue;
    Tensor& m = m_.try_emplace(name, Tensor::Zero(p->rows(), p->cols())).first->second;
    Tensor& v = v_.try_emplace(name, Tensor::Zero(p->rows(), p->cols())).first->second;
    m = b1 * m + (1.0f - b1) * g->second;
    v = b2 * v + (1.0f - b2) * g->second.cwiseAbs2();
    p->array() -= step * m.array() / (v.array().sqrt() + eps);
  }
}

}  // namespace cull
