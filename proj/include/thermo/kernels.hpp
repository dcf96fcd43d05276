#pragma once

#include <cstddef>
#include <span>

// Dense row-major kernels behind every linear layer. Two implementations
// with identical per-element summation order: `serial` is the reference the
// tests compare against, `parallel` splits independent output rows across
// OpenMP threads. Results are bitwise identical between the two.

namespace thermo::kernels {

template <class T>
struct ConstMat {
  const T* data;
  std::size_t rows, cols;
  const T* row(std::size_t i) const { return data + i * cols; }
};

template <class T>
struct MutMat {
  T* data;
  std::size_t rows, cols;
  T* row(std::size_t i) const { return data + i * cols; }
};

namespace serial {

/// c (+)= a * b, a: m x k, b: k x n, c: m x n.
template <class T>
void matmul(ConstMat<T> a, ConstMat<T> b, MutMat<T> c, bool accumulate);

/// c += a^T * b, a: m x k, b: m x n, c: k x n.
template <class T>
void matmul_tn(ConstMat<T> a, ConstMat<T> b, MutMat<T> c);

/// c += a * b^T, a: m x n, b: k x n, c: m x k.
template <class T>
void matmul_nt(ConstMat<T> a, ConstMat<T> b, MutMat<T> c);

/// out[j] += sum_i a[i][j]
template <class T>
void colsum(ConstMat<T> a, std::span<T> out);

}  // namespace serial

namespace parallel {

template <class T>
void matmul(ConstMat<T> a, ConstMat<T> b, MutMat<T> c, bool accumulate);
template <class T>
void matmul_tn(ConstMat<T> a, ConstMat<T> b, MutMat<T> c);
template <class T>
void matmul_nt(ConstMat<T> a, ConstMat<T> b, MutMat<T> c);
template <class T>
void colsum(ConstMat<T> a, std::span<T> out);

}  // namespace parallel

/// Worker count used by the parallel kernels (OpenMP max threads).
int thread_count();

}  // namespace thermo::kernels
