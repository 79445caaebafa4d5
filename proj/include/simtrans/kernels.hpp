#pragma once

// Dense numeric kernels used by the differentiation tape.
//
// Every kernel exists twice: `serial::` is the reference loop nest kept for
// testing, `parallel::` splits output rows across OpenMP threads. Both
// accumulate each output element in the same order, so their results are
// bit-identical for any thread count. The unqualified entry points in
// `kernels::` dispatch to the parallel versions.

#include <cstddef>
#include <span>

namespace simtrans::kernels {

/// Row-major matrix extents.
struct MatDims {
  std::size_t rows;
  std::size_t cols;
};

// GELU, tanh approximation. These constants are part of the checkpoint
// contract: changing them changes what a trained model computes.
inline constexpr double kGeluSqrt2OverPi = 0.7978845608028654;
inline constexpr double kGeluCubic = 0.044715;

double gelu(double x) noexcept;
double gelu_derivative(double x) noexcept;

#define SIMTRANS_KERNEL_DECLS                                                                              \
  /* out = a * b, overwriting out (m x n). */                                                              \
  void matmul(std::span<const double> a, MatDims ad, std::span<const double> b, MatDims bd,                \
              std::span<double> out);                                                                      \
  /* out += a^T * g, where a is m x k, g is m x n, out is k x n. */                                        \
  void matmul_tn_acc(std::span<const double> a, MatDims ad, std::span<const double> g, MatDims gd,         \
                     std::span<double> out);                                                               \
  /* out += g * b^T, where g is m x n, b is k x n, out is m x k. */                                        \
  void matmul_nt_acc(std::span<const double> g, MatDims gd, std::span<const double> b, MatDims bd,         \
                     std::span<double> out);                                                               \
  void softmax_rows(std::span<const double> x, MatDims d, std::span<double> out);                          \
  /* Normalizes each row; writes per-row mean and reciprocal std for the backward pass. */                 \
  void layer_norm(std::span<const double> x, MatDims d, std::span<const double> gamma,                     \
                  std::span<const double> beta, double eps, std::span<double> out, std::span<double> mean, \
                  std::span<double> rstd);                                                                 \
  void gelu(std::span<const double> x, std::span<double> out);

namespace serial {
SIMTRANS_KERNEL_DECLS
}  // namespace serial

namespace parallel {
SIMTRANS_KERNEL_DECLS
}  // namespace parallel

#undef SIMTRANS_KERNEL_DECLS

using parallel::gelu;
using parallel::layer_norm;
using parallel::matmul;
using parallel::matmul_nt_acc;
using parallel::matmul_tn_acc;
using parallel::softmax_rows;

/// Work size (multiply-adds) below which the parallel kernels stay on the
/// calling thread; thread start-up dominates for the small per-image matrices.
inline constexpr std::size_t kParallelThreshold = std::size_t{1} << 16;

}  // namespace simtrans::kernels
