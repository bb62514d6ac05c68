#pragma once

#include <cmath>
#include <vector>

#include "oaug/core/tensor.hpp"
#include "oaug/core/graph.hpp"

namespace oaug {

/// Half-cosine decay from `base` to 0 over `total` steps.
inline double cosine_lr(double base, int64_t step, int64_t total) {
  if (total <= 0) return base;
  const double t = std::min<double>(1.0, static_cast<double>(step) / static_cast<double>(total));
  return 0.5 * base * (1.0 + std::cos(M_PI * t));
}

/// Adam with L2 weight decay folded into the gradient (coupled decay).
class Adam {
 public:
  Adam(double lr, double weight_decay, double beta1, double beta2, double eps)
      : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Var>& params, const std::vector<Tensor>& grads) {
    ensure_slots(params);
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor& p = params[i]->val;
      Tensor& m = m_[i];
      Tensor& v = v_[i];
      const Tensor& g = grads[i];
      for (int64_t j = 0; j < p.numel(); ++j) {
        const double gj = g[j] + wd_ * p[j];
        m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
        v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
        p[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
      }
    }
  }

  int64_t t_ = 0;
  double lr_, wd_, beta1_, beta2_, eps_;
  std::vector<Tensor> m_, v_;

 private:
  void ensure_slots(const std::vector<Var>& params) {
    if (!m_.empty()) return;
    for (const auto& p : params) {
      m_.emplace_back(Tensor::zeros(p->val.shape()));
      v_.emplace_back(Tensor::zeros(p->val.shape()));
    }
  }
};

/// SGD with classical momentum and L2 weight decay; learning rate passed per
/// step so schedules stay outside.
class SgdMomentum {
 public:
  SgdMomentum(double momentum, double weight_decay) : mu_(momentum), wd_(weight_decay) {}

  void step(const std::vector<Var>& params, const std::vector<Tensor>& grads, double lr) {
    if (buf_.empty())
      for (const auto& p : params) buf_.emplace_back(Tensor::zeros(p->val.shape()));
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor& p = params[i]->val;
      Tensor& b = buf_[i];
      const Tensor& g = grads[i];
      for (int64_t j = 0; j < p.numel(); ++j) {
        const double gj = g[j] + wd_ * p[j];
        b[j] = mu_ * b[j] + gj;
        p[j] -= lr * b[j];
      }
    }
  }

  double mu_, wd_;
  std::vector<Tensor> buf_;
};

}  // namespace oaug
