#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "qas/diff.hpp"

namespace qas {

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over one flat parameter vector.
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n, AdamConfig cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> x, std::span<const double> grad) {
    if (x.size() != m_.size() || grad.size() != m_.size()) throw std::invalid_argument("Adam: size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < x.size(); ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
      x[i] -= cfg_.lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.eps);
    }
  }

  long steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

/// Adam over a set of diff::Parameter objects, reading their accumulated grads.
class ParameterAdam {
 public:
  ParameterAdam(std::vector<diff::Parameter*> params, AdamConfig cfg) : params_(std::move(params)) {
    for (auto* p : params_) opt_.emplace_back(p->value.size(), cfg);
  }

  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) opt_[i].step(params_[i]->value.data, params_[i]->grad.data);
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

 private:
  std::vector<diff::Parameter*> params_;
  std::vector<Adam> opt_;
};

}  // namespace qas
