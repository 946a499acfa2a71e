#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dqf/error.hpp"
#include "dqf/ops.hpp"
#include "helpers.hpp"

using namespace dqf;

TEST_CASE("grid times") {
    const auto g = grid_times(7, 3.5);
    REQUIRE(g.size() == 8);
    CHECK(g.front() == 0.0);
    CHECK(g.back() == 3.5);
    for (std::size_t l = 1; l < g.size(); ++l) CHECK(g[l] - g[l - 1] == doctest::Approx(0.5).epsilon(1e-15));
    for (std::size_t l = 0; l < g.size(); ++l) CHECK(g[l] == grid_time(l, 7, 3.5));
}

TEST_CASE("logits shape and determinism") {
    const auto m = testing::tiny_model();
    const auto ids = testing::random_ids(6, 7, 1);
    const auto a = m.forward_logits(ids);
    CHECK(a.shape() == ad::Shape{6, 7});
    CHECK(a.all_finite());
    const auto again = testing::tiny_model();
    CHECK(testing::bitwise_equal(a.data(), again.forward_logits(ids).data()));

    const auto two = m.forward_logits(std::vector<std::size_t>{ids[0], ids[1], ids[2], ids[3], ids[4], ids[5],
                                                               ids[0], ids[1], ids[2], ids[3], ids[4], ids[5]},
                                      2);
    CHECK(two.shape() == ad::Shape{12, 7});
}

TEST_CASE("out-of-vocabulary ids are rejected") {
    const auto m = testing::tiny_model();
    CHECK_THROWS_AS(m.forward_logits(std::vector<std::size_t>{1, 2, 7}), VocabError);
}

TEST_CASE("perturbing a token only changes logits at and after it") {
    const auto m = testing::tiny_model(9);
    const auto ids = testing::random_ids(8, 7, 2);
    const auto base = m.forward_logits(ids);
    for (std::size_t k = 0; k < ids.size(); ++k) {
        auto changed = ids;
        changed[k] = (changed[k] + 3) % 7;
        const auto out = m.forward_logits(changed);
        for (std::size_t j = 0; j < ids.size(); ++j) {
            const auto a = base.data().subspan(j * 7, 7);
            const auto b = out.data().subspan(j * 7, 7);
            if (j < k)
                CHECK(testing::bitwise_equal(a, b));
            else if (j == k)
                CHECK_FALSE(testing::bitwise_equal(a, b));
        }
    }
}

TEST_CASE("later particles have exactly zero influence on earlier outputs") {
    const auto m = testing::tiny_model(4);
    const auto cfg = m.config();
    const auto ids = testing::random_ids(6, 7, 3);
    auto x0 = m.embed(ids, 1);
    for (std::size_t j = 0; j < ids.size(); ++j) {
        auto leaf = x0.x.detach(true);
        SequenceState s = x0;
        s.x = leaf;
        ad::Tape tape;
        const auto traj = euler_solve(s, m.factory(), cfg.n_steps, cfg.horizon, FieldGeometry::of(cfg));
        const auto row = ad::slice_rows(traj.states.back().x, j, j + 1);
        tape.backward(ad::sum(row));
        const auto g = leaf.grad();
        for (std::size_t i = j + 1; i < ids.size(); ++i)
            for (std::size_t c = 0; c < cfg.d_model; ++c) CHECK(g[i * cfg.d_model + c] == 0.0);
        double own = 0.0;
        for (std::size_t c = 0; c < cfg.d_model; ++c) own += std::abs(g[j * cfg.d_model + c]);
        CHECK(own > 0.0);
    }
}

TEST_CASE("field examples") {
    auto cfg = testing::tiny_config();
    const auto g = FieldGeometry::of(cfg);
    Rng rng(8);
    const auto s = testing::random_state(5, cfg.d_model, rng);

    auto w = testing::random_weights(cfg, rng);
    w.v = ad::Tensor::zeros(w.v.shape());
    const auto a = attention_field(s, w, g);
    for (double v : a.data()) CHECK(v == 0.0);

    auto c = testing::random_weights(cfg, rng);
    c.w2 = ad::Tensor::zeros(c.w2.shape());
    const auto ff = ff_field(s, c, g);
    for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t k = 0; k < cfg.d_model; ++k) CHECK(ff.at(r, k) == c.b2[k]);

    auto z = testing::random_weights(cfg, rng);
    z.b1 = ad::Tensor::zeros(z.b1.shape());
    z.b2 = ad::Tensor::zeros(z.b2.shape());
    z.ff_ln_bias = ad::Tensor::zeros(z.ff_ln_bias.shape());
    SequenceState zero = s;
    zero.x = ad::Tensor::zeros(s.x.shape());
    const auto fz = ff_field(zero, z, g);
    for (double v : fz.data()) CHECK(v == 0.0);

    z.v = ad::Tensor::zeros(z.v.shape());
    const auto vz = vector_field(zero, z, g);
    for (double v : vz.data()) CHECK(v == 0.0);
}

TEST_CASE("non-causal field is permutation equivariant") {
    auto cfg = testing::tiny_config();
    const auto g = FieldGeometry::of(cfg);
    Rng rng(12);
    const auto w = testing::random_weights(cfg, rng);
    const auto s = testing::random_state(6, cfg.d_model, rng, false);
    FieldOptions opts;
    opts.causal = false;
    const auto f = vector_field(s, w, g, opts);

    std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    std::vector<double> px;
    for (auto p : perm) {
        const auto row = s.x.data().subspan(p * cfg.d_model, cfg.d_model);
        px.insert(px.end(), row.begin(), row.end());
    }
    SequenceState ps = s;
    ps.x = ad::Tensor::from(s.x.shape(), px);
    const auto pf = vector_field(ps, w, g, opts);
    for (std::size_t r = 0; r < perm.size(); ++r)
        for (std::size_t c = 0; c < cfg.d_model; ++c)
            CHECK(pf.at(r, c) == doctest::Approx(f.at(perm[r], c)).epsilon(1e-12));
}

TEST_CASE("Euler error is first order in the step") {
    auto cfg = testing::tiny_config();
    Rng rng(21);
    const auto w = testing::random_weights(cfg, rng, 0.6);
    const auto s = testing::random_state(5, cfg.d_model, rng);
    const auto g = FieldGeometry::of(cfg);
    // Weights vary smoothly with t so the flow is genuinely non-autonomous.
    LayerWeights weights = [&](std::size_t, double t) {
        WeightSet x = w;
        x.q = ad::scale(w.q, 1.0 + 0.3 * std::sin(t));
        x.v = ad::scale(w.v, std::cos(0.5 * t));
        return x;
    };
    auto terminal = [&](std::size_t n) {
        SolveOptions o;
        o.keep_trajectory = false;
        return euler_solve(s, weights, n, 2.0, g, o).states.back().x;
    };
    auto err = [&](std::size_t n) {
        const auto a = terminal(n), b = terminal(4 * n);
        return testing::max_abs_diff(a.data(), b.data());
    };
    const double e1 = err(16), e2 = err(32), e3 = err(64);
    CHECK(e2 / e1 == doctest::Approx(0.5).epsilon(0.15));
    CHECK(e3 / e2 == doctest::Approx(0.5).epsilon(0.15));
}

TEST_CASE("zero factory leaves the particles in place") {
    auto m = testing::tiny_model();
    for (auto& p : m.factory().parameters()) {
        auto t = p.tensor;
        std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
    }
    const auto cfg = m.config();
    const auto x0 = m.embed(testing::random_ids(5, 7, 4), 1);
    const auto traj = euler_solve(x0, m.factory(), cfg.n_steps, cfg.horizon, FieldGeometry::of(cfg));
    REQUIRE(traj.steps() == cfg.n_steps);
    CHECK(traj.horizon() == cfg.horizon);
    CHECK(testing::bitwise_equal(traj.states.back().x.data(), x0.x.data()));
}

TEST_CASE("diverging state reports its step") {
    auto cfg = testing::tiny_config();
    Rng rng(2);
    auto w = testing::random_weights(cfg, rng);
    w.b2 = ad::Tensor::full(w.b2.shape(), 1e308);
    const auto s = testing::random_state(3, cfg.d_model, rng);
    LayerWeights weights = [&](std::size_t, double) { return w; };
    try {
        euler_solve(s, weights, 4, 4.0, FieldGeometry::of(cfg));
        FAIL("expected divergence");
    } catch (const DivergenceError& e) {
        CHECK(e.step() <= 2);
    }
}

TEST_CASE("invalid geometry is a config error") {
    auto cfg = testing::tiny_config();
    cfg.n_steps = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = testing::tiny_config();
    cfg.dropout = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
