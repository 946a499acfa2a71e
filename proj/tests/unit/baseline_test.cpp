#include <doctest.h>

#include <cmath>

#include "dqf/baseline.hpp"
#include "dqf/ops.hpp"
#include "dqf/training.hpp"
#include "helpers.hpp"

using namespace dqf;

TEST_CASE("vanilla parameter count") {
    const auto cfg = testing::tiny_config();
    Rng rng(1);
    const auto v = make_vanilla(cfg, rng);
    // Stem: 2*7*8 + 8*8 + 2*8 = 192. Block: 4*8 layer-norm entries, 4*64
    // attention, 2*128 + 16 + 8 feed-forward = 568.
    CHECK(vanilla_parameter_count(cfg, 3) == 192 + 3 * 568);
    CHECK(count_parameters(v.parameters()) == vanilla_parameter_count(cfg, 3));
    CHECK(v.kind() == "vanilla");
}

TEST_CASE("zero-layer model is head of normalized embedding") {
    const auto cfg = testing::tiny_config();
    Rng rng(2);
    const auto stem = Stem::create(cfg, rng);
    DiscreteModel z(cfg, stem.clone(), {}, 1.0);
    const std::vector<std::size_t> ids{3, 1, 4, 1};
    const auto logits = z.forward_logits(ids);
    const auto x = ad::add(ad::embedding(stem.tok_emb, ids), ad::slice_rows(stem.pos_emb, 0, 4));
    const auto ref = ad::linear(ad::layernorm(x, stem.lnf_gain, stem.lnf_bias, cfg.ln_eps), stem.head);
    CHECK(testing::bitwise_equal(logits.data(), ref.data()));
}

TEST_CASE("vanilla blocks are unit Euler steps of the shared field") {
    const auto cfg = testing::tiny_config();
    Rng rng(3);
    const auto v = make_vanilla(cfg, rng);
    const std::vector<std::size_t> ids{0, 2, 5};
    auto x = v.embed(ids, 1);
    for (std::size_t l = 0; l < 3; ++l) {
        const auto f = vector_field(x, v.layer_weights(l), FieldGeometry::of(cfg));
        x.x = ad::add(x.x, f);
    }
    const auto& s = v.stem();
    const auto ref = ad::linear(ad::layernorm(x.x, s.lnf_gain, s.lnf_bias, cfg.ln_eps), s.head);
    CHECK(testing::max_abs_diff(ref.data(), v.forward_logits(ids).data()) < 1e-12);
}

TEST_CASE("vanilla and continuous models land within a quarter of each other") {
    std::string text;
    for (int i = 0; i < 80; ++i) text += "the cat sat on the mat. ";
    const auto tok = CharTokenizer::build(text);
    const auto split = split_corpus(tok.encode(text), 0.1);
    auto cfg = testing::tiny_config(tok.size());
    TrainConfig tc;
    tc.lr = 3e-3;
    tc.total_steps = 150;
    tc.batch_size = 4;
    tc.eval_interval = 150;
    tc.eval_windows = 0;
    Rng r1(7), r2(7);
    OdeModel ode(cfg);
    ode.initialize(r1);
    auto van = make_vanilla(cfg, r2);
    const double a = train(ode, split.train, split.val, tc).final_val_loss;
    const double b = train(van, split.train, split.val, tc).final_val_loss;
    CHECK(std::isfinite(a));
    CHECK(std::isfinite(b));
    CHECK(std::abs(a - b) <= 0.25 * std::min(a, b));
}
