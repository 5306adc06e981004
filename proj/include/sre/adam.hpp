#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "sre/tensor.hpp"

namespace sre {

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Moment buffers for a fixed list of parameters. A default-constructed state
// is uninitialized and rejected by adam_step.
class AdamState {
 public:
  AdamState() = default;
  AdamState(std::vector<Tensor> params, AdamOptions options)
      : params_(std::move(params)), options_(options), initialized_(true) {
    for (const auto& p : params_) {
      first_.emplace_back(p.size(), 0.0);
      second_.emplace_back(p.size(), 0.0);
    }
  }

  bool initialized() const { return initialized_; }
  std::int64_t step_count() const { return step_; }
  const AdamOptions& options() const { return options_; }
  const std::vector<Tensor>& params() const { return params_; }

  friend void adam_step(AdamState& state);

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  AdamOptions options_;
  std::int64_t step_ = 0;
  bool initialized_ = false;
};

// One bias-corrected Adam update from each parameter's accumulated grad,
// then zeroes the grads. Parameters with no grad are skipped.
inline void adam_step(AdamState& state) {
  if (!state.initialized_) throw std::logic_error("adam_step: optimizer state is not initialized");
  const auto& o = state.options_;
  ++state.step_;
  const double t = static_cast<double>(state.step_);
  const double correction1 = 1.0 - std::pow(o.beta1, t);
  const double correction2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t p = 0; p < state.params_.size(); ++p) {
    Tensor& param = state.params_[p];
    if (!param.has_grad()) continue;  // never touched by backward: left as is
    const auto grad = param.grad();
    auto value = param.mutable_data();
    auto& m = state.first_[p];
    auto& v = state.second_[p];
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * grad[i];
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * grad[i] * grad[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      value[i] -= o.learning_rate * m_hat / (std::sqrt(v_hat) + o.epsilon);
    }
    param.zero_grad();
  }
}

}  // namespace sre
