#pragma once

#include <cmath>

#include "tancount/tensor.hpp"

namespace tancount {

/// Per-parameter Adam state; step counts the number of updates applied.
template <typename T>
struct AdamState {
  Tensor<T> m, v;
  int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  explicit AdamState(const std::vector<int64_t>& shape) : m(shape), v(shape) {}
};

/// Standard bias-corrected Adam update of param in place from grad.
template <typename T>
void adam_step(Tensor<T>& param, const T* grad, AdamState<T>& state,
               double lr) {
  check(state.m.same_shape(param) && state.v.same_shape(param),
        "adam_step: state shape does not match parameter " +
            param.shape_string());
  state.step += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  T* p = param.data();
  T* m = state.m.data();
  T* v = state.v.data();
  for (int64_t i = 0; i < param.size(); ++i) {
    double g = static_cast<double>(grad[i]);
    double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * g;
    double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    double update = lr * (mi / c1) / (std::sqrt(vi / c2) + state.epsilon);
    p[i] = static_cast<T>(static_cast<double>(p[i]) - update);
  }
}

}  // namespace tancount
