#include <gtest/gtest.h>

#include <cmath>
#include <omp.h>
#include <random>
#include <vector>

#include "simtrans/kernels.hpp"

using namespace simtrans::kernels;

namespace {

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

}  // namespace

TEST(Kernels, MatmulIdentityAndScalar) {
  const std::vector<double> eye = {1, 0, 0, 1}, b = {3, 4, 5, 6};
  std::vector<double> out(4);
  matmul(eye, {2, 2}, b, {2, 2}, out);
  EXPECT_EQ(out, b);
  std::vector<double> one(1);
  matmul(std::vector<double>{2}, {1, 1}, std::vector<double>{3}, {1, 1}, one);
  EXPECT_EQ(one[0], 6.0);
}

TEST(Kernels, MatmulMatchesTripleLoop) {
  std::mt19937_64 rng(3);
  const auto a = random_values(12, rng), b = random_values(8, rng);
  std::vector<double> out(6);
  matmul(a, {3, 4}, b, {4, 2}, out);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) s += a[i * 4 + k] * b[k * 2 + j];
      EXPECT_NEAR(out[i * 2 + j], s, 1e-12);
    }
  }
}

TEST(Kernels, TransposedAccumulatorsMatchExplicitProducts) {
  std::mt19937_64 rng(4);
  const std::size_t m = 5, k = 3, n = 4;
  const auto a = random_values(m * k, rng), g = random_values(m * n, rng), b = random_values(k * n, rng);
  std::vector<double> tn(k * n, 1.0), nt(m * k, -1.0);
  matmul_tn_acc(a, {m, k}, g, {m, n}, tn);
  matmul_nt_acc(g, {m, n}, b, {k, n}, nt);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 1.0;
      for (std::size_t r = 0; r < m; ++r) s += a[r * k + i] * g[r * n + j];
      EXPECT_NEAR(tn[i * n + j], s, 1e-12);
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      double s = -1.0;
      for (std::size_t c = 0; c < n; ++c) s += g[i * n + c] * b[j * n + c];
      EXPECT_NEAR(nt[i * k + j], s, 1e-12);
    }
  }
}

TEST(Kernels, SoftmaxUniformShiftAndFormula) {
  std::vector<double> out(3);
  softmax_rows(std::vector<double>{0, 0, 0}, {1, 3}, out);
  for (double v : out) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);

  std::vector<double> base(3), shifted(3);
  softmax_rows(std::vector<double>{1, 2, 3}, {1, 3}, base);
  softmax_rows(std::vector<double>{101, 102, 103}, {1, 3}, shifted);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(base[i], std::exp(i + 1.0) / z, 1e-12);
    EXPECT_NEAR(shifted[i], base[i], 1e-12);
  }
}

TEST(Kernels, SoftmaxSurvivesLargeLogits) {
  std::vector<double> out(2);
  softmax_rows(std::vector<double>{1000, 0}, {1, 2}, out);
  EXPECT_DOUBLE_EQ(out[0], 1.0);
  EXPECT_GE(out[1], 0.0);
}

TEST(Kernels, LayerNormMatchesDirectFormula) {
  std::mt19937_64 rng(5);
  const std::size_t r = 3, d = 6;
  const auto x = random_values(r * d, rng), gamma = random_values(d, rng), beta = random_values(d, rng);
  std::vector<double> out(r * d), mean(r), rstd(r);
  layer_norm(x, {r, d}, gamma, beta, 1e-6, out, mean, rstd);
  for (std::size_t i = 0; i < r; ++i) {
    double mu = 0.0, var = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += x[i * d + j] / d;
    for (std::size_t j = 0; j < d; ++j) var += (x[i * d + j] - mu) * (x[i * d + j] - mu) / d;
    for (std::size_t j = 0; j < d; ++j) {
      EXPECT_NEAR(out[i * d + j], (x[i * d + j] - mu) / std::sqrt(var + 1e-6) * gamma[j] + beta[j], 1e-12);
    }
  }
}

TEST(Kernels, GeluTanhForm) {
  for (double x : {-3.0, -0.5, 0.0, 0.7, 2.5}) {
    const double expect = 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
    EXPECT_NEAR(gelu(x), expect, 1e-15);
  }
  EXPECT_EQ(gelu(0.0), 0.0);
}

// The parallel kernels must reproduce the serial reference bit for bit,
// whatever the thread count, on sizes large enough to actually fork.
class SerialParallel : public ::testing::TestWithParam<int> {
 protected:
  void SetUp() override { omp_set_num_threads(GetParam()); }
  void TearDown() override { omp_set_num_threads(omp_get_num_procs()); }
};

TEST_P(SerialParallel, MatmulFamilyBitIdentical) {
  std::mt19937_64 rng(6);
  const std::size_t m = 97, k = 64, n = 80;  // m*k*n well above the fork threshold
  const auto a = random_values(m * k, rng), b = random_values(k * n, rng), g = random_values(m * n, rng);
  std::vector<double> s(m * n), p(m * n);
  serial::matmul(a, {m, k}, b, {k, n}, s);
  parallel::matmul(a, {m, k}, b, {k, n}, p);
  EXPECT_EQ(s, p);

  std::vector<double> s_tn(k * n, 0.5), p_tn(k * n, 0.5);
  serial::matmul_tn_acc(a, {m, k}, g, {m, n}, s_tn);
  parallel::matmul_tn_acc(a, {m, k}, g, {m, n}, p_tn);
  EXPECT_EQ(s_tn, p_tn);

  std::vector<double> s_nt(m * k, 0.5), p_nt(m * k, 0.5);
  serial::matmul_nt_acc(g, {m, n}, b, {k, n}, s_nt);
  parallel::matmul_nt_acc(g, {m, n}, b, {k, n}, p_nt);
  EXPECT_EQ(s_nt, p_nt);
}

TEST_P(SerialParallel, RowKernelsBitIdentical) {
  std::mt19937_64 rng(7);
  const std::size_t r = 600, c = 300;
  const auto x = random_values(r * c, rng), gamma = random_values(c, rng), beta = random_values(c, rng);
  std::vector<double> s(r * c), p(r * c);
  serial::softmax_rows(x, {r, c}, s);
  parallel::softmax_rows(x, {r, c}, p);
  EXPECT_EQ(s, p);

  std::vector<double> sm(r), sr(r), pm(r), pr(r);
  serial::layer_norm(x, {r, c}, gamma, beta, 1e-6, s, sm, sr);
  parallel::layer_norm(x, {r, c}, gamma, beta, 1e-6, p, pm, pr);
  EXPECT_EQ(s, p);
  EXPECT_EQ(sm, pm);
  EXPECT_EQ(sr, pr);

  serial::gelu(x, s);
  parallel::gelu(x, p);
  EXPECT_EQ(s, p);
}

INSTANTIATE_TEST_SUITE_P(Threads, SerialParallel, ::testing::Values(1, 2, 3, 4));
