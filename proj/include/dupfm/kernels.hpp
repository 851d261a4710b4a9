// Copyright 2026 The dupfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string_view>

namespace dupfm::kernels {

// Dense real kernels used by the score, MLP and Euler hot loops.
// Matrices are column-major with leading dimension = rows.
struct KernelTable {
  std::string_view name;
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sqnorm)(const double* x, std::size_t n);
  // y += a * x
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // out = a * x + b * y
  void (*lincomb)(double a, const double* x, double b, const double* y, double* out,
                  std::size_t n);
  // y = A x, A is rows x cols
  void (*gemv_n)(const double* a, std::size_t rows, std::size_t cols, const double* x,
                 double* y);
  // y = A^T x, A is rows x cols
  void (*gemv_t)(const double* a, std::size_t rows, std::size_t cols, const double* x,
                 double* y);
  // A += x y^T, A is rows x cols
  void (*ger)(double* a, std::size_t rows, std::size_t cols, const double* x, const double* y);
};

const KernelTable& scalar_table();
// Null when the CPU lacks AVX2+FMA or the build is not x86-64.
const KernelTable* avx2_table();

// Table chosen once at first use. DUPFM_SIMD=scalar forces the reference path.
const KernelTable& active();

inline double dot(const double* a, const double* b, std::size_t n) { return active().dot(a, b, n); }
inline double sqnorm(const double* x, std::size_t n) { return active().sqnorm(x, n); }
inline void axpy(double a, const double* x, double* y, std::size_t n) { active().axpy(a, x, y, n); }
inline void lincomb(double a, const double* x, double b, const double* y, double* out,
                    std::size_t n) {
  active().lincomb(a, x, b, y, out, n);
}
inline void gemv_n(const double* a, std::size_t rows, std::size_t cols, const double* x,
                   double* y) {
  active().gemv_n(a, rows, cols, x, y);
}
inline void gemv_t(const double* a, std::size_t rows, std::size_t cols, const double* x,
                   double* y) {
  active().gemv_t(a, rows, cols, x, y);
}
inline void ger(double* a, std::size_t rows, std::size_t cols, const double* x, const double* y) {
  active().ger(a, rows, cols, x, y);
}

}  // namespace dupfm::kernels
