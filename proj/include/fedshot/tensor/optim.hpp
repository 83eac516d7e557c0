#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fedshot/tensor/tensor.hpp"

namespace fedshot {

enum class OptimizerKind { Adam, Sgd };

// Adam with bias correction. step() consumes the accumulated grads and zeroes
// them, matching the train-loop contract.
template <typename T>
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Tensor<T>> params, T lr, T beta1 = T(0.9), T beta2 = T(0.999),
                T eps = T(1e-8))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& p : params)
      slots_.push_back(Slot{p, std::vector<T>(p.numel(), T(0)), std::vector<T>(p.numel(), T(0))});
  }

  void set_lr(T lr) { lr_ = lr; }

  void step() {
    ++t_;
    const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
    for (size_t si = 0; si < slots_.size(); ++si) {
      Slot& s = slots_[si];
      if (!s.param.has_grad())
        throw MissingGrad("adam step: parameter " + std::to_string(si) + " has no gradient");
      const auto& g = s.param.grad();
      auto& w = s.param.raw_data();
      for (size_t i = 0; i < w.size(); ++i) {
        s.m[i] = beta1_ * s.m[i] + (T(1) - beta1_) * g[i];
        s.v[i] = beta2_ * s.v[i] + (T(1) - beta2_) * g[i] * g[i];
        const T mhat = s.m[i] / bc1;
        const T vhat = s.v[i] / bc2;
        w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
      s.param.zero_grad();
    }
  }

  void zero_grad() {
    for (auto& s : slots_) s.param.zero_grad();
  }

 private:
  struct Slot {
    Tensor<T> param;
    std::vector<T> m, v;
  };
  std::vector<Slot> slots_;
  T lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

template <typename T>
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Tensor<T>> params, T lr) : params_(std::move(params)), lr_(lr) {}

  void set_lr(T lr) { lr_ = lr; }

  void step() {
    for (size_t si = 0; si < params_.size(); ++si) {
      auto& p = params_[si];
      if (!p.has_grad())
        throw MissingGrad("sgd step: parameter " + std::to_string(si) + " has no gradient");
      const auto& g = p.grad();
      auto& w = p.raw_data();
      for (size_t i = 0; i < w.size(); ++i) w[i] -= lr_ * g[i];
      p.zero_grad();
    }
  }

 private:
  std::vector<Tensor<T>> params_;
  T lr_;
};

// Minimal type erasure so the train loop can swap optimizers by config.
template <typename T>
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, std::vector<Tensor<T>> params, T lr) : kind_(kind) {
    if (kind == OptimizerKind::Adam)
      adam_ = std::make_unique<AdamOptimizer<T>>(std::move(params), lr);
    else
      sgd_ = std::make_unique<SgdOptimizer<T>>(std::move(params), lr);
  }
  void step() {
    if (adam_)
      adam_->step();
    else
      sgd_->step();
  }
  OptimizerKind kind() const { return kind_; }

 private:
  OptimizerKind kind_;
  std::unique_ptr<AdamOptimizer<T>> adam_;
  std::unique_ptr<SgdOptimizer<T>> sgd_;
};

}  // namespace fedshot
