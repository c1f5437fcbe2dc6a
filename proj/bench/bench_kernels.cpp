// Parallel kernels against their serial reference versions.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "cfgan/kernels.hpp"

namespace k = cfgan::kernels;

namespace {

std::vector<double> random_vec(std::int64_t n, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = u(rng);
    return v;
}

k::Conv2dGeometry geometry(const benchmark::State& state) {
    k::Conv2dGeometry g;
    g.batch = 16;
    g.in_channels = state.range(0);
    g.out_channels = state.range(1);
    g.in_h = g.in_w = state.range(2);
    g.kernel = 3;
    g.stride = 1;
    g.padding = 1;
    return g;
}

template <bool Parallel>
void BM_Conv2dForward(benchmark::State& state) {
    const auto g = geometry(state);
    const auto in = random_vec(g.input_size(), 1), w = random_vec(g.weight_size(), 2), b = random_vec(g.out_channels, 3);
    std::vector<double> out(static_cast<std::size_t>(g.output_size()));
    for (auto _ : state) {
        if constexpr (Parallel)
            k::conv2d_forward(g, in, w, b, out);
        else
            k::reference::conv2d_forward(g, in, w, b, out);
        benchmark::DoNotOptimize(out.data());
    }
    state.counters["MAC/s"] = benchmark::Counter(
        static_cast<double>(g.output_size() * g.in_channels * 9) * static_cast<double>(state.iterations()),
        benchmark::Counter::kIsRate);
}

template <bool Parallel>
void BM_Conv2dBackward(benchmark::State& state) {
    const auto g = geometry(state);
    const auto in = random_vec(g.input_size(), 1), w = random_vec(g.weight_size(), 2);
    const auto dy = random_vec(g.output_size(), 4);
    std::vector<double> dx(static_cast<std::size_t>(g.input_size())), dw(static_cast<std::size_t>(g.weight_size())),
        db(static_cast<std::size_t>(g.out_channels));
    for (auto _ : state) {
        if constexpr (Parallel) {
            k::conv2d_backward_input(g, dy, w, dx);
            k::conv2d_backward_weight(g, in, dy, dw, db);
        } else {
            k::reference::conv2d_backward_input(g, dy, w, dx);
            k::reference::conv2d_backward_weight(g, in, dy, dw, db);
        }
        benchmark::DoNotOptimize(dx.data());
        benchmark::DoNotOptimize(dw.data());
    }
}

template <bool Parallel>
void BM_Linear(benchmark::State& state) {
    const std::int64_t rows = state.range(0), in = state.range(1), out = state.range(2);
    const auto x = random_vec(rows * in, 1), w = random_vec(out * in, 2), b = random_vec(out, 3);
    std::vector<double> y(static_cast<std::size_t>(rows * out));
    for (auto _ : state) {
        if constexpr (Parallel)
            k::linear_forward(rows, in, out, x, w, b, y);
        else
            k::reference::linear_forward(rows, in, out, x, w, b, y);
        benchmark::DoNotOptimize(y.data());
    }
}

template <bool Parallel>
void BM_BatchedMatmul(benchmark::State& state) {
    const std::int64_t batch = state.range(0), n = state.range(1), d = state.range(2);
    const auto a = random_vec(batch * n * d, 1), bm = random_vec(batch * n * d, 2);
    std::vector<double> c(static_cast<std::size_t>(batch * n * n));
    for (auto _ : state) {
        if constexpr (Parallel)
            k::batched_matmul(batch, n, d, n, a, false, bm, true, c);
        else
            k::reference::batched_matmul(batch, n, d, n, a, false, bm, true, c);
        benchmark::DoNotOptimize(c.data());
    }
}

}  // namespace

BENCHMARK(BM_Conv2dForward<true>)->Args({8, 8, 64})->Args({16, 16, 32})->Args({32, 32, 16})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv2dForward<false>)->Args({8, 8, 64})->Args({16, 16, 32})->Args({32, 32, 16})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv2dBackward<true>)->Args({8, 8, 64})->Args({32, 32, 16})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv2dBackward<false>)->Args({8, 8, 64})->Args({32, 32, 16})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Linear<true>)->Args({1024, 64, 64})->Args({64, 64, 4096});
BENCHMARK(BM_Linear<false>)->Args({1024, 64, 64})->Args({64, 64, 4096});
BENCHMARK(BM_BatchedMatmul<true>)->Args({64, 16, 16})->Args({32, 64, 16});
BENCHMARK(BM_BatchedMatmul<false>)->Args({64, 16, 16})->Args({32, 64, 16});

BENCHMARK_MAIN();
