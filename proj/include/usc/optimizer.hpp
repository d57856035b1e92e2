#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "usc/errors.hpp"
#include "usc/layers.hpp"

namespace usc::nn {

struct NadamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-7;
};

// Nesterov-Adam. Per element:
//   m <- b1*m + (1-b1)*g            v <- b2*v + (1-b2)*g^2
//   m_hat = m/(1-b1^t)              v_hat = v/(1-b2^t)
//   p <- p - lr*(b1*m_hat + (1-b1)*g/(1-b1^t)) / (sqrt(v_hat) + eps)
template <typename T>
class Nadam {
 public:
  explicit Nadam(NadamConfig cfg = {}) : cfg_(cfg) {
    if (cfg_.lr < 0.0) throw ParamError("Nadam: negative learning rate");
  }

  void step(const std::vector<Trainable<T>>& trainables) {
    if (m_.empty()) {
      for (const auto& tr : trainables) {
        m_.emplace_back(tr.param->shape);
        v_.emplace_back(tr.param->shape);
      }
    }
    ++t_;
    const T b1 = static_cast<T>(cfg_.beta1);
    const T b2 = static_cast<T>(cfg_.beta2);
    const T bias1 = T(1) - static_cast<T>(std::pow(cfg_.beta1, t_));
    const T bias2 = T(1) - static_cast<T>(std::pow(cfg_.beta2, t_));
    const T lr = static_cast<T>(cfg_.lr);
    const T eps = static_cast<T>(cfg_.eps);

    for (std::size_t i = 0; i < trainables.size(); ++i) {
      Tensor<T>& p = *trainables[i].param;
      const Tensor<T>& g = *trainables[i].grad;
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      for (std::size_t j = 0; j < p.numel(); ++j) {
        const T gj = g[j];
        m[j] = b1 * m[j] + (T(1) - b1) * gj;
        v[j] = b2 * v[j] + (T(1) - b2) * gj * gj;
        const T m_hat = m[j] / bias1;
        const T v_hat = v[j] / bias2;
        const T update = b1 * m_hat + (T(1) - b1) * gj / bias1;
        p[j] -= lr * update / (std::sqrt(v_hat) + eps);
      }
    }
  }

  long step_count() const { return t_; }

 private:
  NadamConfig cfg_;
  long t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

}  // namespace usc::nn
