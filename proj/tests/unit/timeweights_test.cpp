#include <doctest.h>

#include <cmath>

#include "dqf/error.hpp"
#include "dqf/timeweights.hpp"
#include "helpers.hpp"

using namespace dqf;

namespace {

TimeWeightFactory small_factory(HyperMode mode, std::uint64_t seed = 11) {
    TimeWeightFactory f(weight_targets(testing::tiny_config()), 8, mode);
    Rng rng(seed);
    f.initialize(rng);
    return f;
}

double max_weight_diff(const WeightMap& a, const WeightMap& b) {
    double m = 0.0;
    for (const auto& [name, t] : a) m = std::max(m, testing::max_abs_diff(t.data(), b.at(name).data()));
    return m;
}

}  // namespace

TEST_CASE("sinusoidal embedding at zero") {
    SinusoidalEmbedding e;
    CHECK(e.output_dim() == 257);
    const auto v = e(0.0);
    REQUIRE(v.size() == 257);
    CHECK(v[0] == 0.0);
    for (std::size_t i = 1; i <= 128; ++i) CHECK(v[i] == 0.0);
    for (std::size_t i = 129; i < 257; ++i) CHECK(v[i] == 1.0);
}

TEST_CASE("sinusoidal frequencies decay geometrically from 1") {
    SinusoidalEmbedding e;
    const auto w = e.frequencies();
    CHECK(w[0] == 1.0);
    for (std::size_t i = 1; i < w.size(); ++i) {
        CHECK(w[i] < w[i - 1]);
        CHECK(w[i] == doctest::Approx(std::pow(1e4, -static_cast<double>(i) / 128.0)).epsilon(1e-12));
    }
}

TEST_CASE("materialize is deterministic") {
    const auto f = small_factory(HyperMode::per_target);
    const auto a = f.materialize(1.37);
    const auto b = f.materialize(1.37);
    for (const auto& [name, t] : a) CHECK(testing::bitwise_equal(t.data(), b.at(name).data()));
}

TEST_CASE("zero projection collapses to its bias") {
    auto f = small_factory(HyperMode::shared_mlp);
    for (auto& p : f.parameters()) {
        if (p.name == "factory.proj.q.w") {
            auto w = p.tensor;
            std::fill(w.mutable_data().begin(), w.mutable_data().end(), 0.0);
        }
        if (p.name == "factory.proj.q.b") {
            auto b = p.tensor;
            for (std::size_t i = 0; i < b.size(); ++i) b.mutable_data()[i] = 0.25 * static_cast<double>(i);
        }
    }
    for (double t : {0.0, 0.7, 2.9}) {
        const auto q = f.materialize("q", t);
        for (std::size_t i = 0; i < q.size(); ++i) CHECK(q[i] == 0.25 * static_cast<double>(i));
    }
}

TEST_CASE("unknown target is a registry error") {
    const auto f = small_factory(HyperMode::per_target);
    CHECK_THROWS_AS(f.materialize("nope", 0.0), RegistryError);
}

TEST_CASE("grid materialization") {
    const auto f = small_factory(HyperMode::per_target);
    const double one[] = {0.5};
    const auto single = f.materialize_grid(one);
    CHECK(single.size() == 1);
    const auto direct = f.materialize(0.5);
    for (const auto& [name, t] : direct) CHECK(testing::bitwise_equal(t.data(), single[0].at(name).data()));

    const double ends[] = {0.0, 3.0};
    const auto both = f.materialize_grid(ends);
    CHECK(max_weight_diff(both[0], both[1]) > 0.0);
}

TEST_CASE("modes produce identically shaped weights") {
    const auto a = small_factory(HyperMode::per_target).materialize(1.0);
    const auto b = small_factory(HyperMode::shared_mlp).materialize(1.0);
    REQUIRE(a.size() == b.size());
    for (const auto& [name, t] : a) CHECK(t.shape() == b.at(name).shape());
}

TEST_CASE("parameter count") {
    // Per-target extents at d=8, attention width 8, d_mlp 16 sum to 568 over
    // 12 targets; each MLP has 257*8 + 8 + 8*8 + 8 = 2136 parameters.
    const auto per = small_factory(HyperMode::per_target);
    const auto shared = small_factory(HyperMode::shared_mlp);
    CHECK(per.parameter_count() == 12 * 2136 + 568 * 9);
    CHECK(shared.parameter_count() == 2136 + 568 * 9);
    CHECK(per.parameter_count() ==
          TimeWeightFactory::expected_parameter_count(per.targets(), 8, HyperMode::per_target));
    CHECK(shared.parameter_count() ==
          TimeWeightFactory::expected_parameter_count(shared.targets(), 8, HyperMode::shared_mlp));
}

TEST_CASE("adjacent-grid differences scale with spacing") {
    for (auto mode : {HyperMode::per_target, HyperMode::shared_mlp}) {
        for (std::uint64_t seed : {1, 2, 3}) {
            const auto f = small_factory(mode, seed);
            auto max_step = [&](std::size_t n) {
                const auto grid = grid_times(n, 3.0);
                const auto w = f.materialize_grid(grid);
                double m = 0.0;
                for (std::size_t i = 1; i < w.size(); ++i) m = std::max(m, max_weight_diff(w[i - 1], w[i]));
                return m;
            };
            const double ratio = max_step(64) / max_step(32);
            CHECK(ratio / 0.5 >= 1.0 / 3.0);
            CHECK(ratio / 0.5 <= 3.0);
        }
    }
}

TEST_CASE("layer-norm targets start near identity") {
    const auto f = small_factory(HyperMode::per_target);
    for (double t : {0.0, 1.5, 3.0}) {
        const auto g = f.materialize("attn_ln_gain", t);
        for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::abs(g[i] - 1.0) < 0.2);
    }
}
