#pragma once

#include <cstddef>
#include <vector>

#include "sthq/tensor.hpp"

namespace sthq {

/// SGD with classical momentum: v = mu v + g; w -= lr v.
class SgdMomentum {
 public:
  SgdMomentum(double learning_rate, double momentum = 0.9) : lr_(learning_rate), momentum_(momentum) {}

  void step(std::vector<Tensor*> params, const std::vector<const Tensor*>& grads);
  void set_learning_rate(double lr) noexcept { lr_ = lr; }
  double learning_rate() const noexcept { return lr_; }

 private:
  double lr_;
  double momentum_;
  std::vector<Tensor> velocity_;
};

class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::vector<Tensor*> params, const std::vector<const Tensor*>& grads);
  void set_learning_rate(double lr) noexcept { lr_ = lr; }
  double learning_rate() const noexcept { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace sthq
