#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "dqf/kernels.hpp"

using namespace dqf::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    std::vector<double> v(n);
    for (auto& x : v) x = nd(rng);
    return v;
}

template <bool Parallel>
void BM_gemm_nn(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
    std::vector<double> c(n * n);
    for (auto _ : state) {
        if constexpr (Parallel)
            parallel::gemm_nn(a, b, c, n, n, n);
        else
            serial::gemm_nn(a, b, c, n, n, n);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

template <bool Parallel>
void BM_gemm_nt(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
    std::vector<double> c(n * n);
    for (auto _ : state) {
        if constexpr (Parallel)
            parallel::gemm_nt(a, b, c, n, n, n);
        else
            serial::gemm_nt(a, b, c, n, n, n);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

template <bool Parallel>
void BM_attention(benchmark::State& state) {
    AttentionShape s{8, static_cast<std::size_t>(state.range(0)), 4, 16, true, 0.25};
    const auto q = random_vec(s.rows() * s.width(), 1);
    const auto k = random_vec(s.rows() * s.width(), 2);
    const auto v = random_vec(s.rows() * s.width(), 3);
    const auto gout = random_vec(s.rows() * s.width(), 4);
    std::vector<double> out(q.size()), probs(s.prob_count()), gq(q.size()), gk(q.size()), gv(q.size());
    for (auto _ : state) {
        if constexpr (Parallel) {
            parallel::attention_forward(s, q, k, v, {}, out, probs);
            parallel::attention_backward(s, q, k, v, probs, {}, gout, gq, gk, gv);
        } else {
            serial::attention_forward(s, q, k, v, {}, out, probs);
            serial::attention_backward(s, q, k, v, probs, {}, gout, gq, gk, gv);
        }
        benchmark::DoNotOptimize(gq.data());
    }
}

}  // namespace

BENCHMARK(BM_gemm_nn<false>)->Name("gemm_nn/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_gemm_nn<true>)->Name("gemm_nn/parallel")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_gemm_nt<false>)->Name("gemm_nt/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_gemm_nt<true>)->Name("gemm_nt/parallel")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_attention<false>)->Name("attention/serial")->Arg(64)->Arg(128);
BENCHMARK(BM_attention<true>)->Name("attention/parallel")->Arg(64)->Arg(128);

BENCHMARK_MAIN();
