#include <doctest.h>

#include <cmath>

#include "dqf/discretize.hpp"
#include "dqf/error.hpp"
#include "dqf/ops.hpp"
#include "dqf/training.hpp"
#include "helpers.hpp"

using namespace dqf;

namespace {

std::vector<std::size_t> corpus_ids(std::size_t vocab) {
    std::vector<std::size_t> ids;
    for (int i = 0; i < 400; ++i) ids.push_back((i * i + 3 * i) % vocab);
    return ids;
}

void randomize_adapters(DiscreteModel& d, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> nd(0.0, 0.3);
    for (auto& a : d.adapters())
        for (auto& x : a.b.mutable_data()) x = nd(rng);
}

}  // namespace

TEST_CASE("populating the training grid reproduces the continuous model bitwise") {
    const auto m = testing::tiny_model(2);
    const auto d = populate(m, m.config().n_steps);
    const auto ids = testing::random_ids(8, 7, 1);
    CHECK(testing::bitwise_equal(m.forward_logits(ids).data(), d.forward_logits(ids).data()));
    CHECK(d.kind() == "discrete");
}

TEST_CASE("other grids keep the horizon fixed") {
    const auto m = testing::tiny_model(2);
    for (std::size_t n : {1, 2, 5, 9}) {
        const auto d = populate(m, n);
        CHECK(d.depth_steps() == n);
        CHECK(d.depth_horizon() == m.config().horizon);
        const auto t = d.layer_times();
        for (std::size_t l = 0; l < n; ++l) CHECK(t[l] == grid_time(l, n, m.config().horizon));
        CHECK(std::isfinite(evaluate_loss(d, corpus_ids(7), 8)));
    }
    const auto d18 = populate(m, 18);
    for (std::size_t n : {9, 12, 24}) CHECK(populate(m, n).layer_times()[1] * n == doctest::Approx(3.0));
    CHECK(d18.layer_times()[1] == doctest::Approx(3.0 / 18.0));
    CHECK_THROWS_AS(populate(m, 0), ConfigError);
}

TEST_CASE("LoRA is a no-op at attach time and merges exactly") {
    const auto m = testing::tiny_model(3);
    auto d = populate(m, 3);
    const auto ids = testing::random_ids(8, 7, 2);
    const auto before = d.forward_logits(ids);
    Rng rng(4);
    d.attach_lora({{"q", "v"}, 2, 16.0}, rng);
    CHECK(d.adapters().size() == 6);
    CHECK(testing::bitwise_equal(before.data(), d.forward_logits(ids).data()));

    randomize_adapters(d, 5);
    const auto adapted = d.forward_logits(ids);
    CHECK_FALSE(testing::bitwise_equal(before.data(), adapted.data()));
    d.merge_lora();
    CHECK_FALSE(d.has_adapters());
    CHECK(testing::max_abs_diff(adapted.data(), d.forward_logits(ids).data()) < 1e-12);
}

TEST_CASE("merging zero adapters is the identity") {
    const auto m = testing::tiny_model(3);
    auto d = populate(m, 2);
    const auto q0 = d.layers()[1].q;
    Rng rng(1);
    d.attach_lora({{"q", "o", "w1"}, 4, 8.0}, rng);
    d.merge_lora();
    CHECK(testing::bitwise_equal(q0.data(), d.layers()[1].q.data()));
}

TEST_CASE("LoRA parameter count") {
    const auto m = testing::tiny_model(3);
    auto d = populate(m, 3);
    const LoraConfig lc{{"q", "v", "w1"}, 2, 16.0};
    Rng rng(1);
    d.attach_lora(lc, rng);
    // q and v map 8 -> 8, w1 maps 8 -> 16: 2 * (16 + 16 + 24) per layer.
    CHECK(lora_parameter_count(m.config(), 3, lc) == 3 * 2 * (16 + 16 + 24));
    CHECK(count_parameters(d.trainable_parameters()) == lora_parameter_count(m.config(), 3, lc));
}

TEST_CASE("LoRA rank beyond the matrix is rejected") {
    auto d = populate(testing::tiny_model(3), 2);
    Rng rng(1);
    CHECK_THROWS_AS(d.attach_lora({{"q"}, 9, 16.0}, rng), ConfigError);
    CHECK_THROWS_AS(d.attach_lora({{"attn_ln_gain"}, 1, 16.0}, rng), ConfigError);
}

TEST_CASE("LoRA fine-tuning moves only the adapters") {
    const auto m = testing::tiny_model(6);
    auto d = populate(m, 3);
    Rng rng(2);
    d.attach_lora({{"q", "v"}, 2, 16.0}, rng);
    const auto base = d.layers()[0].q;
    const std::vector<double> base_q(base.data().begin(), base.data().end());
    const auto ids = corpus_ids(7);
    const auto split = split_corpus(ids, 0.1);
    TrainConfig c;
    c.total_steps = 5;
    c.batch_size = 2;
    c.lr = 1e-2;
    const auto r = finetune(d, split.train, split.val, c, TuneMode::lora);
    CHECK(r.steps == 5);
    CHECK(testing::bitwise_equal(base_q, d.layers()[0].q.data()));
    double moved = 0.0;
    for (const auto& a : d.adapters())
        for (double x : a.b.data()) moved += std::abs(x);
    CHECK(moved > 0.0);
}

TEST_CASE("zero alpha never changes the effective weights") {
    const auto m = testing::tiny_model(6);
    auto d = populate(m, 2);
    Rng rng(2);
    d.attach_lora({{"q", "v"}, 2, 0.0}, rng);
    const auto ids = corpus_ids(7);
    const auto split = split_corpus(ids, 0.1);
    const auto probe = testing::random_ids(8, 7, 9);
    const auto before = d.forward_logits(probe);
    TrainConfig c;
    c.total_steps = 3;
    c.batch_size = 2;
    c.lr = 1e-1;
    c.grad_clip = 0.0;
    finetune(d, split.train, split.val, c, TuneMode::lora);
    CHECK(testing::bitwise_equal(before.data(), d.forward_logits(probe).data()));
}

TEST_CASE("full fine-tuning trains weights and stem") {
    const auto m = testing::tiny_model(6);
    auto d = populate(m, 2);
    const auto params = d.trainable_parameters();
    CHECK(count_parameters(params) == count_parameters(d.parameters()));
    const auto split = split_corpus(corpus_ids(7), 0.1);
    const auto probe = testing::random_ids(8, 7, 9);
    const auto before = d.forward_logits(probe);
    TrainConfig c;
    c.total_steps = 0;
    finetune(d, split.train, split.val, c, TuneMode::full);
    CHECK(testing::bitwise_equal(before.data(), d.forward_logits(probe).data()));
    c.total_steps = 1;
    c.batch_size = 2;
    finetune(d, split.train, split.val, c, TuneMode::full);
    CHECK_FALSE(testing::bitwise_equal(before.data(), d.forward_logits(probe).data()));
    // The populated weights no longer come from the factory.
    CHECK_FALSE(testing::bitwise_equal(m.layer_weights(1).w1.data(), d.layers()[1].w1.data()));
}

TEST_CASE("full-mode gradients on the training grid match the continuous per-step weight gradients") {
    const auto m = testing::tiny_model(7);
    auto d = populate(m, m.config().n_steps);
    const auto ids = testing::random_ids(8, 7, 3);
    std::vector<std::size_t> targets(ids.begin() + 1, ids.end());
    targets.push_back(ids.front());

    zero_grads(d.parameters());
    {
        ad::Tape tape;
        tape.backward(ad::cross_entropy(d.forward_logits(ids), targets));
    }
    // Continuous model with its step weights captured as leaves.
    std::vector<WeightSet> leaves;
    for (std::size_t l = 0; l < m.config().n_steps; ++l) {
        auto w = m.layer_weights(l);
        for (const char* name : kMatrixTargets) w.get(name) = w.get(name).detach(true);
        leaves.push_back(w);
    }
    DiscreteModel mirror(m.config(), m.stem().clone(), leaves, m.config().horizon);
    {
        ad::Tape tape;
        tape.backward(ad::cross_entropy(mirror.forward_logits(ids), targets));
    }
    for (std::size_t l = 0; l < leaves.size(); ++l)
        for (const char* name : kMatrixTargets)
            CHECK(testing::bitwise_equal(d.layers()[l].get(name).grad(), leaves[l].get(name).grad()));
}
