#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "proxygap/tensor.hpp"

namespace proxygap {

// Adam with decoupled weight decay. decay_mask selects which parameters
// receive the decay term; pass all-false (or weight_decay = 0) for a plain
// Adam-style update.
template <typename Real>
class AdamW {
 public:
  struct Options {
    double lr = 3e-4;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  AdamW(std::vector<Tensor<Real>> params, std::vector<bool> decay_mask, Options opts)
      : params_(std::move(params)), decay_(std::move(decay_mask)), opts_(opts) {
    if (decay_.size() != params_.size())
      throw std::invalid_argument("AdamW: decay mask size mismatch");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.emplace_back(p->value.size(), Real(0));
      v_.emplace_back(p->value.size(), Real(0));
    }
  }

  void zero_grad() {
    for (const auto& p : params_) proxygap::zero_grad(p);
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i]->value;
      const auto& g = params_[i]->grad;
      const double wd = decay_[i] ? opts_.weight_decay : 0.0;
      for (size_t j = 0; j < p.size(); ++j) {
        const double grad = g[j];
        const double m = opts_.beta1 * m_[i][j] + (1.0 - opts_.beta1) * grad;
        const double v = opts_.beta2 * v_[i][j] + (1.0 - opts_.beta2) * grad * grad;
        m_[i][j] = static_cast<Real>(m);
        v_[i][j] = static_cast<Real>(v);
        const double update = (m / bc1) / (std::sqrt(v / bc2) + opts_.eps) + wd * p[j];
        p[j] = static_cast<Real>(p[j] - opts_.lr * update);
      }
    }
  }

  int64_t steps_taken() const { return t_; }

 private:
  std::vector<Tensor<Real>> params_;
  std::vector<bool> decay_;
  Options opts_;
  std::vector<std::vector<Real>> m_, v_;
  int64_t t_ = 0;
};

}  // namespace proxygap
