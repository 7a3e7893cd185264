#include <algorithm>
#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "kedit/kernels.hpp"

using kedit::kernels::Backend;

namespace {

std::vector<double> filled(std::size_t n, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    std::vector<double> v(n);
    for (auto& x : v) x = g(rng);
    return v;
}

template <Backend B>
void BM_matmul_nt(benchmark::State& st) {
    const auto n = static_cast<std::size_t>(st.range(0));
    const auto a = filled(n * n, 1), b = filled(n * n, 2);
    std::vector<double> c(n * n);
    for (auto _ : st) {
        kedit::kernels::matmul_nt(a.data(), b.data(), c.data(), n, n, n, B);
        benchmark::DoNotOptimize(c.data());
    }
    st.SetItemsProcessed(st.iterations() * static_cast<int64_t>(n * n * n));
}

template <Backend B>
void BM_gram(benchmark::State& st) {
    const auto rows = static_cast<std::size_t>(st.range(0)), n = std::size_t{256};
    const auto x = filled(rows * n, 3);
    std::vector<double> g(n * n);
    for (auto _ : st) {
        std::fill(g.begin(), g.end(), 0.0);
        kedit::kernels::gram_accumulate(x.data(), rows, n, g.data(), B);
        benchmark::DoNotOptimize(g.data());
    }
}

}  // namespace

BENCHMARK(BM_matmul_nt<Backend::serial>)->Arg(64)->Arg(256);
BENCHMARK(BM_matmul_nt<Backend::openmp>)->Arg(64)->Arg(256);
BENCHMARK(BM_gram<Backend::serial>)->Arg(512)->Arg(2048);
BENCHMARK(BM_gram<Backend::openmp>)->Arg(512)->Arg(2048);

BENCHMARK_MAIN();
