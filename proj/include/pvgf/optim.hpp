#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "pvgf/tensor.hpp"

namespace pvgf {

// Scales all gradients so their global L2 norm is at most max_norm.
// Returns the pre-clip norm. max_norm <= 0 disables clipping.
inline double clip_global_norm(const std::vector<std::pair<std::string, Tensor>>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, t] : params) {
    const double* g = t.grad();
    for (long long i = 0; i < t.numel(); ++i) sq += g[i] * g[i];
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& [name, t] : params) {
      double* g = const_cast<Tensor&>(t).grad();
      for (long long i = 0; i < t.numel(); ++i) g[i] *= s;
    }
  }
  return norm;
}

// AdamW with decoupled weight decay: the decay term lr*wd*theta is applied
// directly to the parameter, outside the moment estimates.
class AdamW {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  AdamW() = default;

  AdamW(std::vector<std::pair<std::string, Tensor>> params, double weight_decay)
      : params_(std::move(params)), weight_decay_(weight_decay) {
    for (const auto& [name, t] : params_) {
      m_.emplace_back(static_cast<std::size_t>(t.numel()), 0.0);
      v_.emplace_back(static_cast<std::size_t>(t.numel()), 0.0);
    }
  }

  const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }
  double weight_decay() const { return weight_decay_; }
  long long step_count() const { return step_; }

  void step(double lr) {
    ++step_;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor& t = params_[k].second;
      double* theta = t.data();
      const double* g = t.grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (long long i = 0; i < t.numel(); ++i) {
        m[static_cast<std::size_t>(i)] = kBeta1 * m[static_cast<std::size_t>(i)] + (1.0 - kBeta1) * g[i];
        v[static_cast<std::size_t>(i)] = kBeta2 * v[static_cast<std::size_t>(i)] + (1.0 - kBeta2) * g[i] * g[i];
        const double mhat = m[static_cast<std::size_t>(i)] / bc1;
        const double vhat = v[static_cast<std::size_t>(i)] / bc2;
        theta[i] -= lr * mhat / (std::sqrt(vhat) + kEps) + lr * weight_decay_ * theta[i];
      }
    }
  }

  // Serialization hooks for checkpoints.
  const std::vector<double>& moment1(std::size_t k) const { return m_[k]; }
  const std::vector<double>& moment2(std::size_t k) const { return v_[k]; }
  void restore(std::size_t k, std::vector<double> m, std::vector<double> v) {
    m_[k] = std::move(m);
    v_[k] = std::move(v);
  }
  void set_step_count(long long s) { step_ = s; }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::vector<double>> m_, v_;
  double weight_decay_ = 0.01;
  long long step_ = 0;
};

// Step-decay learning-rate schedule: lr * factor^floor((epoch-1)/every) for
// 1-indexed epochs.
inline double scheduled_lr(double base_lr, double decay_factor, int decay_every, int epoch) {
  if (decay_every < 1) return base_lr;
  const int drops = (epoch - 1) / decay_every;
  return base_lr * std::pow(decay_factor, static_cast<double>(drops));
}

}  // namespace pvgf
