#include <doctest.h>

#include <random>
#include <vector>

#include "dqf/kernels.hpp"
#include "helpers.hpp"

#ifdef DQF_HAVE_OPENMP
#include <omp.h>
#endif

using namespace dqf::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    std::vector<double> v(n);
    for (auto& x : v) x = nd(rng);
    return v;
}

// More threads than cores is fine; it is the split that matters.
struct ManyThreads {
#ifdef DQF_HAVE_OPENMP
    int saved = omp_get_max_threads();
    ManyThreads() { omp_set_num_threads(4); }
    ~ManyThreads() { omp_set_num_threads(saved); }
#endif
};

}  // namespace

TEST_CASE("serial and parallel gemm agree bitwise") {
    ManyThreads threads;
    std::mt19937_64 rng(1);
    for (auto [m, k, n] : {std::array<std::size_t, 3>{1, 1, 1}, {7, 5, 3}, {33, 17, 65}, {64, 128, 32}}) {
        const auto a = random_vec(m * k, rng), b = random_vec(k * n, rng), bt = random_vec(n * k, rng);
        const auto at = random_vec(m * n, rng);
        std::vector<double> c1(m * n), c2(m * n), d1(k * n), d2(k * n);
        serial::gemm_nn(a, b, c1, m, k, n);
        parallel::gemm_nn(a, b, c2, m, k, n);
        CHECK(testing::bitwise_equal(c1, c2));
        serial::gemm_nt(a, bt, c1, m, k, n);
        parallel::gemm_nt(a, bt, c2, m, k, n);
        CHECK(testing::bitwise_equal(c1, c2));
        serial::gemm_tn(a, at, d1, m, k, n);
        parallel::gemm_tn(a, at, d2, m, k, n);
        CHECK(testing::bitwise_equal(d1, d2));
    }
}

TEST_CASE("gemm matches a naive triple loop") {
    std::mt19937_64 rng(2);
    const std::size_t m = 5, k = 4, n = 3;
    const auto a = random_vec(m * k, rng), b = random_vec(k * n, rng);
    std::vector<double> c(m * n);
    gemm_nn(a, b, c, m, k, n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
            CHECK(c[i * n + j] == doctest::Approx(s).epsilon(1e-14));
        }
}

TEST_CASE("serial and parallel attention agree bitwise") {
    ManyThreads threads;
    std::mt19937_64 rng(3);
    for (bool causal : {true, false}) {
        for (bool drop : {false, true}) {
            AttentionShape s{4, 32, 2, 8, causal, 0.35};
            const auto q = random_vec(s.rows() * s.width(), rng);
            const auto k = random_vec(s.rows() * s.width(), rng);
            const auto v = random_vec(s.rows() * s.width(), rng);
            std::vector<double> scale;
            if (drop) {
                std::bernoulli_distribution keep(0.8);
                for (std::size_t i = 0; i < s.prob_count(); ++i) scale.push_back(keep(rng) ? 1.25 : 0.0);
            }
            std::vector<double> o1(q.size()), o2(q.size()), p1(s.prob_count()), p2(s.prob_count());
            serial::attention_forward(s, q, k, v, scale, o1, p1);
            parallel::attention_forward(s, q, k, v, scale, o2, p2);
            CHECK(testing::bitwise_equal(o1, o2));
            CHECK(testing::bitwise_equal(p1, p2));

            const auto gout = random_vec(q.size(), rng);
            std::vector<double> gq1(q.size()), gk1(q.size()), gv1(q.size());
            std::vector<double> gq2(q.size()), gk2(q.size()), gv2(q.size());
            serial::attention_backward(s, q, k, v, p1, scale, gout, gq1, gk1, gv1);
            parallel::attention_backward(s, q, k, v, p2, scale, gout, gq2, gk2, gv2);
            CHECK(testing::bitwise_equal(gq1, gq2));
            CHECK(testing::bitwise_equal(gk1, gk2));
            CHECK(testing::bitwise_equal(gv1, gv2));
        }
    }
}

TEST_CASE("thread count is positive") { CHECK(thread_count() >= 1); }
