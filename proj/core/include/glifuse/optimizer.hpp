#pragma once

// Adam with bias correction, optional decoupled weight decay (scaled by
// the current learning rate, applied only to parameters flagged for
// decay), and the half-cosine learning-rate schedule.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "glifuse/tensor.hpp"

namespace glifuse {

template <typename T>
struct Param {
  std::string name;
  Tensor<T> tensor;
  bool decay = true;  // false for biases and normalization parameters
};

template <typename T>
using ParamList = std::vector<Param<T>>;

template <typename T>
class Adam {
public:
  struct Config {
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
  };

  explicit Adam(Config config = {}) : config_(config) {}

  // One update over all parameters using their accumulated gradients:
  //   t <- t+1; m <- b1*m + (1-b1)*g; v <- b2*v + (1-b2)*g^2
  //   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
  // followed by theta <- theta - lr * weight_decay * theta on decaying
  // parameters.
  void step(ParamList<T>& params, T lr, T weight_decay = T(0)) {
    if (slots_.empty()) {
      slots_.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        slots_[i].m.assign(params[i].tensor.numel(), T(0));
        slots_[i].v.assign(params[i].tensor.numel(), T(0));
      }
    }
    if (slots_.size() != params.size()) {
      throw std::invalid_argument("Adam::step: parameter count changed");
    }
    ++t_;
    const T bc1 = T(1) - std::pow(config_.beta1, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(config_.beta2, static_cast<T>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& theta = params[i].tensor.mutable_data();
      const auto& g = params[i].tensor.grad();
      auto& slot = slots_[i];
      if (slot.m.size() != theta.size()) {
        throw std::invalid_argument("Adam::step: shape mismatch with state");
      }
      for (std::size_t j = 0; j < theta.size(); ++j) {
        slot.m[j] = config_.beta1 * slot.m[j] + (T(1) - config_.beta1) * g[j];
        slot.v[j] =
            config_.beta2 * slot.v[j] + (T(1) - config_.beta2) * g[j] * g[j];
        const T m_hat = slot.m[j] / bc1;
        const T v_hat = slot.v[j] / bc2;
        theta[j] -= lr * m_hat / (std::sqrt(v_hat) + config_.eps);
      }
      if (weight_decay != T(0) && params[i].decay) {
        for (std::size_t j = 0; j < theta.size(); ++j) {
          theta[j] -= lr * weight_decay * theta[j];
        }
      }
    }
  }

  std::uint64_t step_count() const { return t_; }
  const Config& config() const { return config_; }

  // Serialization hooks for checkpoints.
  struct Slot {
    std::vector<T> m, v;
  };
  const std::vector<Slot>& slots() const { return slots_; }
  void restore(std::vector<Slot> slots, std::uint64_t t) {
    slots_ = std::move(slots);
    t_ = t;
  }

private:
  Config config_;
  std::vector<Slot> slots_;
  std::uint64_t t_ = 0;
};

struct CosineSchedule {
  double eta_max = 1e-3;
  double eta_min = 0.0;
  std::uint64_t total_steps = 1;
};

// eta(t) = eta_min + 0.5*(eta_max - eta_min)*(1 + cos(pi*t/T)).
inline double cosine_lr(const CosineSchedule& schedule, std::uint64_t t) {
  if (schedule.total_steps < 1) {
    throw std::invalid_argument("cosine_lr: total_steps must be >= 1");
  }
  if (schedule.eta_min > schedule.eta_max) {
    throw std::invalid_argument("cosine_lr: eta_min must be <= eta_max");
  }
  if (t > schedule.total_steps) {
    throw std::invalid_argument("cosine_lr: step out of range");
  }
  const double phase = std::numbers::pi * static_cast<double>(t) /
                       static_cast<double>(schedule.total_steps);
  return schedule.eta_min +
         0.5 * (schedule.eta_max - schedule.eta_min) * (1.0 + std::cos(phase));
}

}  // namespace glifuse
