#include "thermo/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <vector>

namespace thermo::kernels {

namespace {

// Below this many output rows the OpenMP fork costs more than it saves.
constexpr std::size_t kParallelRows = 16;

template <class T>
inline void axpy(T alpha, const T* __restrict x, T* __restrict y, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) y[j] += alpha * x[j];
}

template <class T>
inline void matmul_row(ConstMat<T> a, ConstMat<T> b, MutMat<T> c, std::size_t i, bool accumulate) {
  T* ci = c.row(i);
  if (!accumulate) std::fill(ci, ci + c.cols, T(0));
  const T* ai = a.row(i);
  for (std::size_t p = 0; p < a.cols; ++p) axpy(ai[p], b.row(p), ci, c.cols);
}

template <class T>
inline void matmul_tn_row(ConstMat<T> a, ConstMat<T> b, MutMat<T> c, std::size_t p) {
  T* cp = c.row(p);
  for (std::size_t i = 0; i < a.rows; ++i) axpy(a.data[i * a.cols + p], b.row(i), cp, c.cols);
}

template <class T>
std::vector<T> transpose(ConstMat<T> b) {
  std::vector<T> bt(b.rows * b.cols);
  for (std::size_t i = 0; i < b.rows; ++i)
    for (std::size_t j = 0; j < b.cols; ++j) bt[j * b.rows + i] = b.data[i * b.cols + j];
  return bt;
}

}  // namespace

namespace serial {

template <class T>
void matmul(ConstMat<T> a, ConstMat<T> b, MutMat<T> c, bool accumulate) {
  for (std::size_t i = 0; i < a.rows; ++i) matmul_row(a, b, c, i, accumulate);
}

template <class T>
void matmul_tn(ConstMat<T> a, ConstMat<T> b, MutMat<T> c) {
  for (std::size_t p = 0; p < a.cols; ++p) matmul_tn_row(a, b, c, p);
}

template <class T>
void matmul_nt(ConstMat<T> a, ConstMat<T> b, MutMat<T> c) {
  const auto bt = transpose(b);
  matmul(a, ConstMat<T>{bt.data(), b.cols, b.rows}, c, true);
}

template <class T>
void colsum(ConstMat<T> a, std::span<T> out) {
  for (std::size_t i = 0; i < a.rows; ++i) axpy(T(1), a.row(i), out.data(), a.cols);
}

}  // namespace serial

namespace parallel {

template <class T>
void matmul(ConstMat<T> a, ConstMat<T> b, MutMat<T> c, bool accumulate) {
  const auto m = static_cast<std::ptrdiff_t>(a.rows);
#pragma omp parallel for schedule(static) if (a.rows >= kParallelRows)
  for (std::ptrdiff_t i = 0; i < m; ++i) matmul_row(a, b, c, static_cast<std::size_t>(i), accumulate);
}

template <class T>
void matmul_tn(ConstMat<T> a, ConstMat<T> b, MutMat<T> c) {
  const auto k = static_cast<std::ptrdiff_t>(a.cols);
#pragma omp parallel for schedule(static) if (a.cols >= kParallelRows)
  for (std::ptrdiff_t p = 0; p < k; ++p) matmul_tn_row(a, b, c, static_cast<std::size_t>(p));
}

template <class T>
void matmul_nt(ConstMat<T> a, ConstMat<T> b, MutMat<T> c) {
  const auto bt = transpose(b);
  matmul(a, ConstMat<T>{bt.data(), b.cols, b.rows}, c, true);
}

template <class T>
void colsum(ConstMat<T> a, std::span<T> out) {
  // Columns are independent; each thread owns a column stripe and walks
  // rows in order, so the per-element summation order matches serial.
  const auto n = static_cast<std::ptrdiff_t>(a.cols);
#pragma omp parallel for schedule(static) if (a.cols >= 256)
  for (std::ptrdiff_t j = 0; j < n; ++j) {
    T s = out[static_cast<std::size_t>(j)];
    for (std::size_t i = 0; i < a.rows; ++i) s += a.data[i * a.cols + static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(j)] = s;
  }
}

}  // namespace parallel

int thread_count() { return omp_get_max_threads(); }

#define THERMO_INSTANTIATE(NS, T)                                              \
  template void NS::matmul<T>(ConstMat<T>, ConstMat<T>, MutMat<T>, bool);     \
  template void NS::matmul_tn<T>(ConstMat<T>, ConstMat<T>, MutMat<T>);        \
  template void NS::matmul_nt<T>(ConstMat<T>, ConstMat<T>, MutMat<T>);        \
  template void NS::colsum<T>(ConstMat<T>, std::span<T>);

THERMO_INSTANTIATE(serial, float)
THERMO_INSTANTIATE(serial, double)
THERMO_INSTANTIATE(parallel, float)
THERMO_INSTANTIATE(parallel, double)

#undef THERMO_INSTANTIATE

}  // namespace thermo::kernels
