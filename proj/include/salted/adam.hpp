#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "salted/error.hpp"
#include "salted/tensor.hpp"

namespace salted {

template <typename T>
struct AdamState {
  std::uint64_t step = 0;
  std::vector<T> m;
  std::vector<T> v;
  T lr = T(0.001);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T epsilon = T(1e-8);

  /// Zeroed moments for `count` parameters.
  static AdamState zeros(std::size_t count, T lr = T(0.001)) {
    AdamState s;
    s.m.assign(count, T{0});
    s.v.assign(count, T{0});
    s.lr = lr;
    return s;
  }
};

/// One bias-corrected Adam update over parameters laid end to end in the
/// order given; the moment arrays use the same flat layout.
template <typename T>
void adam_step(AdamState<T>& state, std::span<Tensor<T>* const> params,
               std::span<const Tensor<T>> grads) {
  if (params.size() != grads.size()) {
    throw Error(Errc::AlignmentMismatch, std::to_string(params.size()) + " parameter tensors vs " +
                                             std::to_string(grads.size()) + " gradients");
  }
  std::size_t total = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape()) {
      throw Error(Errc::AlignmentMismatch, "tensor " + std::to_string(i) + ": parameter " +
                                               shape_str(params[i]->shape()) + " vs gradient " +
                                               shape_str(grads[i].shape()));
    }
    total += params[i]->size();
  }
  if (state.m.size() != total || state.v.size() != total) {
    throw Error(Errc::AlignmentMismatch, "moment arrays hold " + std::to_string(state.m.size()) +
                                             " entries, parameters " + std::to_string(total));
  }

  state.step += 1;
  const T t = static_cast<T>(state.step);
  const T correction1 = T{1} - std::pow(state.beta1, t);
  const T correction2 = T{1} - std::pow(state.beta2, t);

  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i];
    const Tensor<T>& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j, ++offset) {
      T& m = state.m[offset];
      T& v = state.v[offset];
      m = state.beta1 * m + (T{1} - state.beta1) * g[j];
      v = state.beta2 * v + (T{1} - state.beta2) * g[j] * g[j];
      const T m_hat = m / correction1;
      const T v_hat = v / correction2;
      p[j] -= state.lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

}  // namespace salted
