#include "simtrans/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <vector>

namespace simtrans::kernels {

double gelu(double x) noexcept {
  const double inner = kGeluSqrt2OverPi * (x + kGeluCubic * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(inner));
}

double gelu_derivative(double x) noexcept {
  const double inner = kGeluSqrt2OverPi * (x + kGeluCubic * x * x * x);
  const double t = std::tanh(inner);
  const double dinner = kGeluSqrt2OverPi * (1.0 + 3.0 * kGeluCubic * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
}

// ---------------------------------------------------------------------------
// Reference loops. Deliberately plain; the tests compare `parallel::` against
// these bit for bit.

namespace serial {

void matmul(std::span<const double> a, MatDims ad, std::span<const double> b, MatDims bd, std::span<double> out) {
  for (std::size_t i = 0; i < ad.rows; ++i) {
    for (std::size_t j = 0; j < bd.cols; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < ad.cols; ++p) acc += a[i * ad.cols + p] * b[p * bd.cols + j];
      out[i * bd.cols + j] = acc;
    }
  }
}

void matmul_tn_acc(std::span<const double> a, MatDims ad, std::span<const double> g, MatDims gd,
                   std::span<double> out) {
  for (std::size_t p = 0; p < ad.cols; ++p) {
    for (std::size_t j = 0; j < gd.cols; ++j) {
      double acc = out[p * gd.cols + j];
      for (std::size_t i = 0; i < ad.rows; ++i) acc += a[i * ad.cols + p] * g[i * gd.cols + j];
      out[p * gd.cols + j] = acc;
    }
  }
}

void matmul_nt_acc(std::span<const double> g, MatDims gd, std::span<const double> b, MatDims bd,
                   std::span<double> out) {
  for (std::size_t i = 0; i < gd.rows; ++i) {
    for (std::size_t p = 0; p < bd.rows; ++p) {
      double acc = out[i * bd.rows + p];
      for (std::size_t j = 0; j < gd.cols; ++j) acc += g[i * gd.cols + j] * b[p * bd.cols + j];
      out[i * bd.rows + p] = acc;
    }
  }
}

void softmax_rows(std::span<const double> x, MatDims d, std::span<double> out) {
  for (std::size_t r = 0; r < d.rows; ++r) {
    const double* row = x.data() + r * d.cols;
    double* dst = out.data() + r * d.cols;
    double mx = row[0];
    for (std::size_t c = 1; c < d.cols; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < d.cols; ++c) {
      dst[c] = std::exp(row[c] - mx);
      sum += dst[c];
    }
    for (std::size_t c = 0; c < d.cols; ++c) dst[c] /= sum;
  }
}

void layer_norm(std::span<const double> x, MatDims d, std::span<const double> gamma, std::span<const double> beta,
                double eps, std::span<double> out, std::span<double> mean, std::span<double> rstd) {
  for (std::size_t r = 0; r < d.rows; ++r) {
    const double* row = x.data() + r * d.cols;
    double m = 0.0;
    for (std::size_t c = 0; c < d.cols; ++c) m += row[c];
    m /= static_cast<double>(d.cols);
    double var = 0.0;
    for (std::size_t c = 0; c < d.cols; ++c) var += (row[c] - m) * (row[c] - m);
    var /= static_cast<double>(d.cols);
    const double rs = 1.0 / std::sqrt(var + eps);
    mean[r] = m;
    rstd[r] = rs;
    for (std::size_t c = 0; c < d.cols; ++c) out[r * d.cols + c] = (row[c] - m) * rs * gamma[c] + beta[c];
  }
}

void gelu(std::span<const double> x, std::span<double> out) {
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = kernels::gelu(x[i]);
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP versions. Rows are distributed across threads; within a row the
// accumulation order matches the serial loops exactly.

namespace parallel {

namespace {
bool worth_threads(std::size_t work) { return work >= kParallelThreshold && !omp_in_parallel(); }
}  // namespace

void matmul(std::span<const double> a, MatDims ad, std::span<const double> b, MatDims bd, std::span<double> out) {
  const std::size_t m = ad.rows, k = ad.cols, n = bd.cols;
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (worth_threads(m * k * n))
  for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* dst = out.data() + i * n;
    std::fill(dst, dst + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double s = a[i * k + p];
      const double* src = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) dst[j] += s * src[j];
    }
  }
}

void matmul_tn_acc(std::span<const double> a, MatDims ad, std::span<const double> g, MatDims gd,
                   std::span<double> out) {
  const std::size_t m = ad.rows, k = ad.cols, n = gd.cols;
  const auto rows = static_cast<std::ptrdiff_t>(k);
#pragma omp parallel for schedule(static) if (worth_threads(m * k * n))
  for (std::ptrdiff_t pp = 0; pp < rows; ++pp) {
    const auto p = static_cast<std::size_t>(pp);
    double* dst = out.data() + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double s = a[i * k + p];
      const double* src = g.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) dst[j] += s * src[j];
    }
  }
}

void matmul_nt_acc(std::span<const double> g, MatDims gd, std::span<const double> b, MatDims bd,
                   std::span<double> out) {
  const std::size_t m = gd.rows, n = gd.cols, k = bd.rows;
  std::vector<double> bt(n * k);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  }
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (worth_threads(m * k * n))
  for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* dst = out.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double s = g[i * n + j];
      const double* src = bt.data() + j * k;
      for (std::size_t p = 0; p < k; ++p) dst[p] += s * src[p];
    }
  }
}

void softmax_rows(std::span<const double> x, MatDims d, std::span<double> out) {
  const auto rows = static_cast<std::ptrdiff_t>(d.rows);
#pragma omp parallel for schedule(static) if (worth_threads(d.rows * d.cols * 16))
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    serial::softmax_rows(x.subspan(static_cast<std::size_t>(r) * d.cols, d.cols), {1, d.cols},
                         out.subspan(static_cast<std::size_t>(r) * d.cols, d.cols));
  }
}

void layer_norm(std::span<const double> x, MatDims d, std::span<const double> gamma, std::span<const double> beta,
                double eps, std::span<double> out, std::span<double> mean, std::span<double> rstd) {
  const auto rows = static_cast<std::ptrdiff_t>(d.rows);
#pragma omp parallel for schedule(static) if (worth_threads(d.rows * d.cols * 8))
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const auto ur = static_cast<std::size_t>(r);
    serial::layer_norm(x.subspan(ur * d.cols, d.cols), {1, d.cols}, gamma, beta, eps,
                       out.subspan(ur * d.cols, d.cols), mean.subspan(ur, 1), rstd.subspan(ur, 1));
  }
}

void gelu(std::span<const double> x, std::span<double> out) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for schedule(static) if (worth_threads(x.size() * 16))
  for (std::ptrdiff_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = kernels::gelu(x[static_cast<std::size_t>(i)]);
}

}  // namespace parallel

}  // namespace simtrans::kernels
