#include "sthq/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace sthq {

namespace {

void check_pairs(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                 std::vector<Tensor>& state) {
  if (params.size() != grads.size()) throw std::invalid_argument("optimizer: parameter/gradient count mismatch");
  if (state.empty()) {
    for (const Tensor* p : params) state.emplace_back(p->shape(), 0.0);
  }
  if (state.size() != params.size()) throw std::invalid_argument("optimizer: parameter set changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i]->shape() || state[i].shape() != params[i]->shape()) {
      throw ShapeError("optimizer: shape mismatch for parameter " + std::to_string(i));
    }
  }
}

}  // namespace

void SgdMomentum::step(std::vector<Tensor*> params, const std::vector<const Tensor*>& grads) {
  check_pairs(params, grads, velocity_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i]->data();
    auto g = grads[i]->data();
    auto v = velocity_[i].data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      v[k] = momentum_ * v[k] + g[k];
      w[k] -= lr_ * v[k];
    }
  }
}

void Adam::step(std::vector<Tensor*> params, const std::vector<const Tensor*>& grads) {
  check_pairs(params, grads, m_);
  if (v_.empty()) v_ = m_;
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i]->data();
    auto g = grads[i]->data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      w[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

}  // namespace sthq
