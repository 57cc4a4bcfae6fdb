#pragma once

#include <cmath>
#include <vector>

#include "s3mot/tensor.hpp"

namespace s3mot {

// Plain Adam over a fixed parameter list. Parameters keep their persistent
// grads; call zero_grad() between steps.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, double lr = 1e-3,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (auto& p : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, t_);
    const double bc2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      if (!p.has_grad()) continue;
      auto g = p.grad();
      auto d = p.data();
      for (std::size_t i = 0; i < d.size(); ++i) {
        m_[k][i] = b1_ * m_[k][i] + (1.0 - b1_) * g[i];
        v_[k][i] = b2_ * v_[k][i] + (1.0 - b2_) * g[i] * g[i];
        d[i] -= lr_ * (m_[k][i] / bc1) / (std::sqrt(v_[k][i] / bc2) + eps_);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  std::vector<Tensor> params_;
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace s3mot
