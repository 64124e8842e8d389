#pragma once

#include "dgssm/tensor.hpp"

namespace dgssm {

// Plain SGD with momentum: v = μ·v + g, p -= lr·v. Gradients are consumed
// (zeroed) by step(); velocity buffers are keyed by parameter order, which
// must not change between calls.
template <typename T>
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

  void step(const std::vector<Tensor<T>*>& params) {
    if (velocity_.empty()) {
      velocity_.resize(params.size());
      for (size_t i = 0; i < params.size(); ++i)
        velocity_[i].assign(static_cast<size_t>(params[i]->numel()), T(0));
    }
    if (velocity_.size() != params.size())
      throw Error("optimizer: parameter list changed size");
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor<T>& p = *params[i];
      if (static_cast<long>(velocity_[i].size()) != p.numel())
        throw Error("optimizer: parameter " + std::to_string(i) + " changed shape");
      const std::vector<T>& g = p.grad();
      std::vector<T>& v = velocity_[i];
      std::vector<T>& w = p.mutable_data();
      for (size_t j = 0; j < v.size(); ++j) {
        v[j] = static_cast<T>(momentum_) * v[j] + g[j];
        w[j] -= static_cast<T>(lr_) * v[j];
      }
      p.zero_grad();
    }
  }

 private:
  double lr_;
  double momentum_;
  std::vector<std::vector<T>> velocity_;
};

}  // namespace dgssm
