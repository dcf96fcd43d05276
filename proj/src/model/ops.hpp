#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "thermo/kernels.hpp"

namespace thermo::model::ops {

inline constexpr double kNormEps = 1e-5;

template <class T>
inline T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
inline T softplus(T x) {
  return x > T(20) ? x : std::log1p(std::exp(x));
}

template <class T>
inline T silu(T x) {
  return x * sigmoid(x);
}

template <class T>
inline T silu_grad(T x) {
  const T s = sigmoid(x);
  return s * (T(1) + x * (T(1) - s));
}

template <class T>
inline T gelu(T x) {
  constexpr T c = T(0.7978845608028654);
  return T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x)));
}

template <class T>
inline T gelu_grad(T x) {
  constexpr T c = T(0.7978845608028654);
  const T th = std::tanh(c * (x + T(0.044715) * x * x * x));
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * c * (T(1) + T(3) * T(0.044715) * x * x);
}

/// y = g * x / rms(x); returns 1 / rms(x).
template <class T>
inline T rmsnorm_row(const T* x, const T* g, T* y, std::size_t d) {
  T ss = T(0);
  for (std::size_t i = 0; i < d; ++i) ss += x[i] * x[i];
  const T r = T(1) / std::sqrt(ss / static_cast<T>(d) + T(kNormEps));
  for (std::size_t i = 0; i < d; ++i) y[i] = x[i] * r * g[i];
  return r;
}

/// dx += d(rmsnorm)/dx^T dy. The gain gradient is accumulated separately.
template <class T>
inline void rmsnorm_backward_row(const T* x, const T* g, T r, const T* dy, T* dx, std::size_t d) {
  T dot = T(0);
  for (std::size_t i = 0; i < d; ++i) dot += dy[i] * g[i] * x[i] * r;
  const T k = dot / static_cast<T>(d);
  for (std::size_t i = 0; i < d; ++i) dx[i] += r * (dy[i] * g[i] - x[i] * r * k);
}

/// Per-state-index root energy across channels: out[j] = sqrt(sum_c h[c][j]^2),
/// h laid out channels x d_state.
template <class T>
inline void state_summary(const T* h, std::size_t channels, std::size_t d_state, T* out) {
  for (std::size_t j = 0; j < d_state; ++j) out[j] = T(0);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t j = 0; j < d_state; ++j) out[j] += h[c * d_state + j] * h[c * d_state + j];
  for (std::size_t j = 0; j < d_state; ++j) out[j] = std::sqrt(out[j]);
}

template <class T>
using Buf = std::vector<T>;

template <class T>
inline kernels::ConstMat<T> cm(const Buf<T>& b, std::size_t rows, std::size_t cols) {
  return {b.data(), rows, cols};
}
template <class T>
inline kernels::ConstMat<T> cm(std::span<const T> b, std::size_t rows, std::size_t cols) {
  return {b.data(), rows, cols};
}
template <class T>
inline kernels::MutMat<T> mm(Buf<T>& b, std::size_t rows, std::size_t cols) {
  return {b.data(), rows, cols};
}
template <class T>
inline kernels::MutMat<T> mm(std::span<T> b, std::size_t rows, std::size_t cols) {
  return {b.data(), rows, cols};
}

}  // namespace thermo::model::ops
