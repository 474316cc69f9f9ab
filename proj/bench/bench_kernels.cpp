// Parallel kernels against the serial reference loops, on layer shapes the
// default network actually runs (Ce = 64, 8 heads, 32x32 LR patches).

#include <benchmark/benchmark.h>
#include <omp.h>

#include <vector>

#include "cotmisr/kernels.hpp"
#include "cotmisr/rng.hpp"

namespace k = cotmisr::kernels;

namespace {

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  cotmisr::Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

using GemmFn = void (*)(k::Trans, k::Trans, std::size_t, std::size_t, std::size_t, const float*, const float*,
                        float*, bool);

template <GemmFn fn>
void bm_gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0)), n = static_cast<std::size_t>(state.range(1)),
             kk = static_cast<std::size_t>(state.range(2));
  const auto a = random_vec(m * kk, 1), b = random_vec(kk * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    fn(k::Trans::no, k::Trans::no, m, n, kk, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] =
      benchmark::Counter(2.0 * m * n * kk * state.iterations() * 1e-9, benchmark::Counter::kIsRate);
}

k::ConvGeometry conv_geometry(const benchmark::State& state, bool depthwise) {
  k::ConvGeometry g;
  g.batch = static_cast<std::size_t>(state.range(0));
  g.in_channels = g.out_channels = 64;
  g.height = g.width = static_cast<std::size_t>(state.range(1));
  g.kernel_h = g.kernel_w = 3;
  g.padding = 1;
  if (!depthwise) g.in_channels = static_cast<std::size_t>(state.range(2));
  return g;
}

using ConvFn = void (*)(const k::ConvGeometry&, const float*, const float*, const float*, float*);

template <ConvFn fn, bool depthwise>
void bm_conv(benchmark::State& state) {
  const k::ConvGeometry g = conv_geometry(state, depthwise);
  const std::size_t cin = depthwise ? 1 : g.in_channels;
  const auto x = random_vec(g.batch * g.in_channels * g.height * g.width, 3);
  const auto w = random_vec(g.out_channels * cin * 9, 4), bias = random_vec(g.out_channels, 5);
  std::vector<float> y(g.batch * g.out_channels * g.out_height() * g.out_width());
  for (auto _ : state) {
    fn(g, x.data(), w.data(), bias.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
  const double flops = 2.0 * y.size() * cin * 9;
  state.counters["GFLOP/s"] = benchmark::Counter(flops * state.iterations() * 1e-9, benchmark::Counter::kIsRate);
}

using AttnFn = void (*)(std::size_t, std::size_t, std::size_t, const float*, const float*, const float*, float,
                        float*, float*);

template <AttnFn fn>
void bm_attention(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0)), len = static_cast<std::size_t>(state.range(1));
  const std::size_t dim = 8;
  const auto q = random_vec(n * len * dim, 6), kk = random_vec(n * len * dim, 7), v = random_vec(n * len * dim, 8);
  std::vector<float> out(n * len * dim), probs(n * len * len);
  for (auto _ : state) {
    fn(n, len, dim, q.data(), kk.data(), v.data(), 0.35355339f, out.data(), probs.data());
    benchmark::DoNotOptimize(out.data());
  }
  state.counters["GFLOP/s"] =
      benchmark::Counter(4.0 * n * len * len * dim * state.iterations() * 1e-9, benchmark::Counter::kIsRate);
}

void gemm_args(benchmark::internal::Benchmark* b) {
  b->Args({64, 64, 64})->Args({256, 256, 256})->Args({64, 1024, 576})->Unit(benchmark::kMicrosecond);
}
void conv_args(benchmark::internal::Benchmark* b) {
  b->Args({1, 32, 64})->Args({8, 32, 64})->Args({8, 16, 18})->Unit(benchmark::kMicrosecond);
}
void dw_args(benchmark::internal::Benchmark* b) { b->Args({1, 32})->Args({8, 32})->Unit(benchmark::kMicrosecond); }
void attn_args(benchmark::internal::Benchmark* b) {
  b->Args({8, 256})->Args({64, 256})->Args({8, 1024})->Unit(benchmark::kMicrosecond);
}

}  // namespace

BENCHMARK(bm_gemm<k::gemm<float>>)->Name("gemm/parallel")->Apply(gemm_args);
BENCHMARK(bm_gemm<k::reference::gemm<float>>)->Name("gemm/reference")->Apply(gemm_args);
BENCHMARK(bm_conv<k::conv2d_forward<float>, false>)->Name("conv2d/parallel")->Apply(conv_args);
BENCHMARK(bm_conv<k::reference::conv2d_forward<float>, false>)->Name("conv2d/reference")->Apply(conv_args);
BENCHMARK(bm_conv<k::depthwise_forward<float>, true>)->Name("depthwise/parallel")->Apply(dw_args);
BENCHMARK(bm_conv<k::reference::depthwise_forward<float>, true>)->Name("depthwise/reference")->Apply(dw_args);
BENCHMARK(bm_attention<k::attention_forward<float>>)->Name("attention/parallel")->Apply(attn_args);
BENCHMARK(bm_attention<k::reference::attention_forward<float>>)->Name("attention/reference")->Apply(attn_args);

int main(int argc, char** argv) {
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::AddCustomContext("omp_max_threads", std::to_string(omp_get_max_threads()));
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
