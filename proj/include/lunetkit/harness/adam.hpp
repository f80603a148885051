#pragma once

#include <cmath>
#include <vector>

#include "lunetkit/diffcore/tensor.hpp"

namespace lunetkit::harness {

/// Adam with bias correction. Reads each parameter's gradient buffer and
/// zeroes it after the update.
class Adam {
 public:
  Adam(std::vector<diffcore::Tensor<float>*> params, double learning_rate, double beta1 = 0.9,
       double beta2 = 0.999, double epsilon = 1e-8)
      : params_(std::move(params)), lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(epsilon) {
    for (auto* p : params_) {
      m_.emplace_back(p->size(), 0.0f);
      v_.emplace_back(p->size(), 0.0f);
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto* p = params_[k];
      auto g = p->grad();
      auto values = p->values();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double gi = g[i];
        m[i] = static_cast<float>(b1_ * m[i] + (1.0 - b1_) * gi);
        v[i] = static_cast<float>(b2_ * v[i] + (1.0 - b2_) * gi * gi);
        const double mh = m[i] / c1, vh = v[i] / c2;
        values[i] = static_cast<float>(values[i] - lr_ * mh / (std::sqrt(vh) + eps_));
      }
      p->zero_grad();
    }
  }

  std::size_t steps() const noexcept { return t_; }

 private:
  std::vector<diffcore::Tensor<float>*> params_;
  double lr_, b1_, b2_, eps_;
  std::vector<std::vector<float>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace lunetkit::harness
