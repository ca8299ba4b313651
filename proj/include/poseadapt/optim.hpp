// Optimizers over Param lists: Adam (pretraining) and momentum SGD with
// weight decay (adaptation), plus the step/polynomial learning-rate decay
// schedules used by the training engine.
#pragma once

#include <cmath>
#include <vector>

#include "poseadapt/layers.hpp"

namespace poseadapt {

class Adam {
 public:
  explicit Adam(std::vector<Param*> params, real lr, real beta1 = 0.9,
                real beta2 = 0.999, real eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2),
        eps_(eps) {
    for (Param* p : params_) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  void set_lr(real lr) { lr_ = lr; }
  real lr() const { return lr_; }

  void step() {
    ++t_;
    const real bc1 = 1 - std::pow(beta1_, real(t_));
    const real bc2 = 1 - std::pow(beta2_, real(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& val = params_[i]->value;
      const Tensor& g = params_[i]->grad;
      Tensor& m = m_[i];
      Tensor& v = v_[i];
      for (std::size_t j = 0; j < val.numel(); ++j) {
        m[j] = beta1_ * m[j] + (1 - beta1_) * g[j];
        v[j] = beta2_ * v[j] + (1 - beta2_) * g[j] * g[j];
        val[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
      }
    }
  }

 private:
  std::vector<Param*> params_;
  real lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Tensor> m_, v_;
};

class SgdMomentum {
 public:
  explicit SgdMomentum(std::vector<Param*> params, real lr, real momentum = 0.9,
                       real weight_decay = 0)
      : params_(std::move(params)), lr_(lr), momentum_(momentum),
        weight_decay_(weight_decay) {
    for (Param* p : params_) vel_.emplace_back(p->value.shape());
  }

  void set_lr(real lr) { lr_ = lr; }
  real lr() const { return lr_; }

  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& val = params_[i]->value;
      const Tensor& g = params_[i]->grad;
      Tensor& v = vel_[i];
      for (std::size_t j = 0; j < val.numel(); ++j) {
        const real grad = g[j] + weight_decay_ * val[j];
        v[j] = momentum_ * v[j] + grad;
        val[j] -= lr_ * v[j];
      }
    }
  }

 private:
  std::vector<Param*> params_;
  real lr_, momentum_, weight_decay_;
  std::vector<Tensor> vel_;
};

// Polynomial decay: lr0 * (1 + gamma * iter)^(-power).
inline real poly_decay(real lr0, long iter, real gamma = 1e-4,
                       real power = 0.75) {
  return lr0 * std::pow(1 + gamma * real(iter), -power);
}

// Step decay: multiply by `factor` once per milestone passed.
inline real step_decay(real lr0, int epoch, const std::vector<int>& milestones,
                       real factor = 0.1) {
  real lr = lr0;
  for (int m : milestones)
    if (epoch >= m) lr *= factor;
  return lr;
}

}  // namespace poseadapt
