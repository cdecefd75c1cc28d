#pragma once

#include <cmath>
#include <vector>

#include "lithoseg/nn/param.hpp"

namespace lithoseg {

// Adam optimizer over a ParamSet. Moment buffers are indexed by parameter
// position, so the set must not grow once stepping has begun.
template <class S>
class Adam {
 public:
  explicit Adam(ParamSet<S>& params, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : params_(params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  int64_t step_count() const { return t_; }

  // Applies one update using the gradients currently stored on the
  // parameters; parameters whose gradient was not produced are skipped.
  void step() {
    if (m_.empty()) {
      m_.resize(params_.items.size());
      v_.resize(params_.items.size());
      for (size_t i = 0; i < params_.items.size(); ++i) {
        const auto& p = params_.items[i];
        m_[i] = Tensor<S>::zeros(p.value.n, p.value.c, p.value.h, p.value.w);
        v_[i] = Tensor<S>::zeros(p.value.n, p.value.c, p.value.h, p.value.w);
      }
    }
    check(m_.size() == params_.items.size(), "adam: parameter set changed size");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    for (size_t i = 0; i < params_.items.size(); ++i) {
      auto& p = params_.items[i];
      if (!p.has_grad) continue;
      check(p.grad.same_shape(p.value), "adam: gradient shape mismatch for " + p.name);
      auto& m = m_[i].data;
      auto& v = v_[i].data;
      m = S(beta1_) * m + S(1.0 - beta1_) * p.grad.data;
      v = S(beta2_) * v + S(1.0 - beta2_) * p.grad.data.square();
      p.value.data -=
          S(lr_) * (m / S(bc1)) / ((v / S(bc2)).sqrt() + S(eps_));
    }
  }

 private:
  ParamSet<S>& params_;
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<Tensor<S>> m_, v_;
};

}  // namespace lithoseg
