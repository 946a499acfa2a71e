#include <doctest.h>

#include <cmath>

#include "dqf/error.hpp"
#include "dqf/lyapunov.hpp"
#include "helpers.hpp"
#include "selftest/oracles.hpp"

using namespace dqf;
using linalg::Matrix;

TEST_CASE("attention Jacobian vanishes without values") {
    auto cfg = testing::tiny_config();
    Rng rng(1);
    auto w = testing::random_weights(cfg, rng);
    w.v = ad::Tensor::zeros(w.v.shape());
    const auto s = testing::random_state(4, cfg.d_model, rng);
    for (std::size_t in = 0; in <= 3; ++in)
        for (double x : jacobian_attention(s, w, FieldGeometry::of(cfg), in, 3).a) CHECK(x == 0.0);
}

TEST_CASE("feed-forward Jacobian examples") {
    auto cfg = testing::tiny_config();
    Rng rng(2);
    auto w = testing::random_weights(cfg, rng);
    const auto s = testing::random_state(4, cfg.d_model, rng);
    const auto g = FieldGeometry::of(cfg);
    for (double x : jacobian_ff(s, w, g, 1, 2).a) CHECK(x == 0.0);
    w.w1 = ad::Tensor::zeros(w.w1.shape());
    for (double x : jacobian_ff(s, w, g, 2, 2).a) CHECK(x == 0.0);
}

TEST_CASE("closed-form Jacobians match autodiff") {
    auto cfg = testing::tiny_config();
    const auto g = FieldGeometry::of(cfg);
    for (std::uint64_t seed : {3, 4, 5}) {
        Rng rng(seed);
        const auto w = testing::random_weights(cfg, rng);
        const auto s = testing::random_state(5, cfg.d_model, rng);
        for (std::size_t out = 0; out < 5; ++out) {
            const auto ref = autodiff_jacobians(s, w, g, out);
            const FieldLinearization lin(s, w, g, out);
            for (std::size_t in = 0; in <= out; ++in)
                CHECK(oracle::relative_error(lin.total(in).a, ref[in].a, 1e-12) < 1e-6);
            if (out < 4) CHECK_THROWS_AS(lin.attention(out + 1), MaskedPairError);
        }
    }
}

TEST_CASE("per-head attention Jacobians sum to the full one") {
    auto cfg = testing::tiny_config();
    Rng rng(6);
    const auto w = testing::random_weights(cfg, rng);
    const auto s = testing::random_state(5, cfg.d_model, rng);
    const FieldLinearization lin(s, w, FieldGeometry::of(cfg), 4);
    for (std::size_t in = 0; in < 5; ++in) {
        const auto full = lin.attention(in);
        const auto h0 = lin.attention(in, 0), h1 = lin.attention(in, 1);
        for (std::size_t i = 0; i < full.a.size(); ++i)
            CHECK(full.a[i] == doctest::Approx(h0.a[i] + h1.a[i]).epsilon(1e-12));
    }
}

TEST_CASE("tangent and score examples") {
    std::vector<Matrix> zeros(5, Matrix(3, 3, 0.0));
    const auto t = tangent_solve(zeros, 0.5);
    CHECK(t.y.a == Matrix::identity(3).a);
    CHECK(sensitivity_score(t, 2.5) == 0.0);
    CHECK(sensitivity_score(Matrix::identity(4), 1.0) == 0.0);
    for (double c : {0.5, 2.0, 7.0})
        CHECK(sensitivity_score(Matrix(Matrix::identity(3).rows, 3, {c, 0, 0, 0, c, 0, 0, 0, c}), 3.0) ==
              doctest::Approx(std::log(c) / 3.0).epsilon(1e-12));

    // Diagonal J: Y(T) = prod (1 + dt * j_l).
    std::vector<Matrix> diag;
    for (int l = 0; l < 4; ++l) diag.push_back(Matrix(2, 2, {0.1 * l, 0, 0, -0.2}));
    const auto d = tangent_solve(diag, 0.5);
    double p0 = 1.0, p1 = 1.0;
    for (int l = 0; l < 4; ++l) p0 *= 1.0 + 0.5 * 0.1 * l, p1 *= 1.0 - 0.5 * 0.2;
    CHECK(std::exp(d.log_scale) * d.y(0, 0) == doctest::Approx(p0).epsilon(1e-12));
    CHECK(std::exp(d.log_scale) * d.y(1, 1) == doctest::Approx(p1).epsilon(1e-12));
}

TEST_CASE("renormalization keeps large tangents finite") {
    std::vector<Matrix> big(50, Matrix(2, 2, {1e10, 0, 0, 1.0}));
    const auto t = tangent_solve(big, 1.0, 0, 0, 1e100);
    CHECK(std::isfinite(t.log_scale));
    for (double x : t.y.a) CHECK(std::isfinite(x));
    CHECK(sensitivity_score(t, 50.0) == doctest::Approx(std::log(1e10 + 1.0)).epsilon(1e-10));
}

TEST_CASE("score is invariant under orthogonal rotation") {
    Rng rng(7);
    Matrix y(3, 3);
    std::normal_distribution<double> nd;
    for (auto& x : y.a) x = nd(rng);
    const double th = 0.7;
    const Matrix q(3, 3, {std::cos(th), -std::sin(th), 0, std::sin(th), std::cos(th), 0, 0, 0, 1});
    CHECK(sensitivity_score(linalg::matmul(q, y), 2.0) == doctest::Approx(sensitivity_score(y, 2.0)).epsilon(1e-12));
    const double smax = oracle::sigma_max(y.a, 3, 3);
    CHECK(sensitivity_score(y, 2.0) == doctest::Approx(std::log(smax) / 2.0).epsilon(1e-10));
}

TEST_CASE("sensitivity map shape") {
    const auto m = testing::tiny_model(8, 5);
    const auto tok = CharTokenizer::build("abcde");
    const std::vector<std::size_t> one{2};
    const auto single = sensitivity_map(m, tok, one, 0);
    CHECK(single.scores.size() == 1);
    CHECK(std::isfinite(single.scores[0]));

    const std::vector<std::size_t> ids{0, 3, 1, 4, 2, 2};
    SensitivityOptions o;
    o.per_head = true;
    o.attention_baseline = true;
    const auto map = sensitivity_map(m, tok, ids, 4, o);
    CHECK(map.scores.size() == 5);
    CHECK(map.per_head.size() == 2);
    CHECK(map.attention_mean.size() == ids.size());
    CHECK(map.tokens.size() == ids.size());
    const auto json = sensitivity_json(map);
    CHECK(json.find("\"scores\"") != std::string::npos);
    CHECK(sensitivity_html(map).find("<html") != std::string::npos);

    SensitivityOptions ad_opts;
    ad_opts.source = JacobianSource::autodiff;
    const auto ref = sensitivity_map(m, tok, ids, 4, ad_opts);
    for (std::size_t i = 0; i < 5; ++i) CHECK(map.scores[i] == doctest::Approx(ref.scores[i]).epsilon(1e-9));
}

TEST_CASE("scores ignore token identity beyond the embeddings") {
    // Swapping two vocabulary entries together with their embedding and head
    // rows leaves every score unchanged.
    auto m = testing::tiny_model(10, 5);
    const auto tok = CharTokenizer::build("abcde");
    const std::vector<std::size_t> ids{0, 1, 2, 1, 3};
    const auto before = sensitivity_map(m, tok, ids, 4);
    auto swap_rows = [](ad::Tensor t, std::size_t a, std::size_t b) {
        const std::size_t c = t.cols();
        auto d = t.mutable_data();
        for (std::size_t k = 0; k < c; ++k) std::swap(d[a * c + k], d[b * c + k]);
    };
    swap_rows(m.stem().tok_emb, 1, 4);
    swap_rows(m.stem().head, 1, 4);
    const std::vector<std::size_t> relabeled{0, 4, 2, 4, 3};
    const auto after = sensitivity_map(m, tok, relabeled, 4);
    for (std::size_t i = 0; i < before.scores.size(); ++i) CHECK(before.scores[i] == after.scores[i]);
}
