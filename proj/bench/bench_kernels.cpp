// Serial reference kernels against the OpenMP versions, at the shapes a
// training step actually sees plus a few larger ones.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "simtrans/kernels.hpp"
#include "simtrans/model.hpp"
#include "simtrans/train.hpp"

namespace k = simtrans::kernels;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

template <bool Parallel>
void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = noise(n * n, 1), b = noise(n * n, 2);
  std::vector<double> out(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::matmul(a, {n, n}, b, {n, n}, out);
    } else {
      k::serial::matmul(a, {n, n}, b, {n, n}, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * n));
}

template <bool Parallel>
void BM_MatmulTnAcc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = noise(n * n, 3), g = noise(n * n, 4);
  std::vector<double> out(n * n, 0.0);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::matmul_tn_acc(a, {n, n}, g, {n, n}, out);
    } else {
      k::serial::matmul_tn_acc(a, {n, n}, g, {n, n}, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * n));
}

template <bool Parallel>
void BM_Softmax(benchmark::State& state) {
  const auto r = static_cast<std::size_t>(state.range(0));
  const auto x = noise(r * r, 5);
  std::vector<double> out(r * r);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::softmax_rows(x, {r, r}, out);
    } else {
      k::serial::softmax_rows(x, {r, r}, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_LayerNorm(benchmark::State& state) {
  const auto r = static_cast<std::size_t>(state.range(0));
  const std::size_t d = 256;
  const auto x = noise(r * d, 6), gamma = noise(d, 7), beta = noise(d, 8);
  std::vector<double> out(r * d), mean(r), rstd(r);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::layer_norm(x, {r, d}, gamma, beta, 1e-6, out, mean, rstd);
    } else {
      k::serial::layer_norm(x, {r, d}, gamma, beta, 1e-6, out, mean, rstd);
    }
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_Gelu(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = noise(n, 9);
  std::vector<double> out(n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::gelu(x, out);
    } else {
      k::serial::gelu(x, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
}

// One full training step of the default model on a batch of 16 random images.
void BM_TrainStep(benchmark::State& state) {
  simtrans::TrainConfig cfg;
  const simtrans::Model model = simtrans::Model::init(cfg.model_config(8), 1);
  const simtrans::PatchGrid grid = model.config.grid();
  std::vector<simtrans::Tensor> patches;
  for (int i = 0; i < 16; ++i) {
    simtrans::Tensor t({grid.count(), grid.patch_dim()});
    const auto v = noise(t.size(), 100 + i);
    std::copy(v.begin(), v.end(), t.data());
    patches.push_back(std::move(t));
  }
  std::vector<const simtrans::Tensor*> ptrs;
  std::vector<int> labels;
  for (int i = 0; i < 16; ++i) {
    ptrs.push_back(&patches[i]);
    labels.push_back(i % 8);
  }
  for (auto _ : state) {
    auto g = simtrans::batch_gradients(model, ptrs, labels, {});
    benchmark::DoNotOptimize(g.report.total);
  }
}

}  // namespace

BENCHMARK(BM_Matmul<false>)->Name("matmul/serial")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_Matmul<true>)->Name("matmul/parallel")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_MatmulTnAcc<false>)->Name("matmul_tn_acc/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_MatmulTnAcc<true>)->Name("matmul_tn_acc/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_Softmax<false>)->Name("softmax/serial")->Arg(17)->Arg(512);
BENCHMARK(BM_Softmax<true>)->Name("softmax/parallel")->Arg(17)->Arg(512);
BENCHMARK(BM_LayerNorm<false>)->Name("layer_norm/serial")->Arg(17)->Arg(4096);
BENCHMARK(BM_LayerNorm<true>)->Name("layer_norm/parallel")->Arg(17)->Arg(4096);
BENCHMARK(BM_Gelu<false>)->Name("gelu/serial")->Arg(17 * 256)->Arg(1 << 20);
BENCHMARK(BM_Gelu<true>)->Name("gelu/parallel")->Arg(17 * 256)->Arg(1 << 20);
BENCHMARK(BM_TrainStep)->Name("train_step/batch16")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
