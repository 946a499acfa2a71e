#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "dqf/error.hpp"
#include "dqf/ops.hpp"
#include "dqf/tokenizer.hpp"
#include "dqf/training.hpp"
#include "helpers.hpp"

using namespace dqf;

TEST_CASE("tokenizer examples") {
    const auto tok = CharTokenizer::build("aba");
    CHECK(tok.size() == 2);
    CHECK(tok.encode("aba") == std::vector<std::size_t>{0, 1, 0});
    CHECK(tok.decode({1, 0, 1}) == "bab");
    CHECK_THROWS_AS(tok.encode("abc"), VocabError);
    CHECK_THROWS_AS(CharTokenizer::build(""), IngestionError);
}

TEST_CASE("tokenizer round trip over multibyte text") {
    const std::string text = "Grüße, 世界! naïve café\n\t~";
    const auto tok = CharTokenizer::build(text);
    const auto ids = tok.encode(text);
    CHECK(tok.decode(ids) == text);
    for (auto id : ids) CHECK(id < tok.size());
    for (std::size_t i = 1; i < tok.size(); ++i) CHECK(tok.vocabulary()[i - 1] < tok.vocabulary()[i]);
    CHECK_THROWS_AS(CharTokenizer::build("\xff"), IngestionError);
}

TEST_CASE("learning-rate schedule") {
    TrainConfig c;
    c.lr = 1e-3;
    c.total_steps = 1000;
    CHECK(c.warmup_steps() == 10);
    CHECK(lr_schedule(0, c) == 0.0);
    CHECK(lr_schedule(5, c) == doctest::Approx(5e-4).epsilon(1e-14));
    CHECK(lr_schedule(10, c) == doctest::Approx(1e-3).epsilon(1e-14));
    CHECK(lr_schedule(1000, c) == doctest::Approx(1e-4).epsilon(1e-14));
    // Midpoint of the decay: cos(pi/2) = 0 leaves (0.1 + 0.9/2) of the base.
    CHECK(lr_schedule(505, c) == doctest::Approx(1e-3 * 0.55).epsilon(1e-12));
    for (std::size_t s = 11; s <= 1000; ++s) CHECK(lr_schedule(s, c) <= lr_schedule(s - 1, c));
}

TEST_CASE("Adam with zero gradient and no decay leaves parameters alone") {
    Rng rng(1);
    ParamList params{{"w", normal_tensor({3, 3}, 1.0, rng), true}};
    const std::vector<double> before(params[0].tensor.data().begin(), params[0].tensor.data().end());
    TrainConfig c;
    c.weight_decay = 0.0;
    auto state = adam_init(params);
    zero_grads(params);
    for (int i = 0; i < 5; ++i) adam_step(params, state, c, 1e-2);
    CHECK(testing::bitwise_equal(before, params[0].tensor.data()));
}

TEST_CASE("Adam converges on a convex quadratic") {
    Rng rng(2);
    auto x = normal_tensor({6}, 2.0, rng);
    const auto target = ad::Tensor::from({6}, {1, -2, 0.5, 3, -1, 0});
    ParamList params{{"x", x, false}};
    TrainConfig c;
    c.weight_decay = 0.0;
    auto state = adam_init(params);
    for (int i = 0; i < 3000; ++i) {
        zero_grads(params);
        ad::Tape tape;
        tape.backward(ad::sum_squares(ad::sub(x, target)));
        adam_step(params, state, c, 1e-2 * (1.0 - i / 3000.0));
    }
    for (std::size_t i = 0; i < 6; ++i) CHECK(x[i] == doctest::Approx(target[i]).epsilon(1e-3));
}

TEST_CASE("Adam rejects a non-finite gradient") {
    auto x = ad::Tensor::from({1}, {1.0}, true);
    ParamList params{{"x", x, true}};
    auto state = adam_init(params);
    x.mutable_grad()[0] = std::nan("");
    CHECK_THROWS_AS(adam_step(params, state, TrainConfig{}, 1e-3), DivergenceError);
}

TEST_CASE("validation split is the trailing fraction") {
    std::vector<std::size_t> ids(200);
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    const auto s = split_corpus(ids, 0.05);
    CHECK(s.train.size() == 190);
    CHECK(s.val.size() == 10);
    CHECK(s.val.front() == 190);
    CHECK(s.val.back() == 199);
}

TEST_CASE("uniform logits give perplexity equal to the vocabulary size") {
    auto m = testing::tiny_model(1, 5);
    auto head = m.stem().head;
    std::fill(head.mutable_data().begin(), head.mutable_data().end(), 0.0);
    const auto tok = CharTokenizer::build("abcde");
    CHECK(evaluate_perplexity(m, tok, "abcdeedcbaabcde", 4) == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("training reduces loss and is reproducible") {
    std::string text;
    for (int i = 0; i < 60; ++i) text += "abcabdabe ";
    const auto tok = CharTokenizer::build(text);
    const auto split = split_corpus(tok.encode(text), 0.1);
    TrainConfig c;
    c.lr = 1e-2;
    c.total_steps = 60;
    c.batch_size = 4;
    c.eval_interval = 20;
    c.eval_windows = 0;
    auto run = [&] {
        auto m = testing::tiny_model(5, tok.size());
        const auto r = train(m, split.train, split.val, c);
        return std::make_pair(r, m.forward_logits(std::vector<std::size_t>{0, 1, 2}));
    };
    const auto [r1, l1] = run();
    const auto [r2, l2] = run();
    CHECK(r1.final_val_loss < r1.initial_val_loss);
    CHECK(r1.curve.size() == 61);
    for (const auto& p : r1.curve)
        if (p.step > 0) {
            CHECK(std::isfinite(p.train_loss));
            CHECK(std::isfinite(p.grad_norm));
        }
    CHECK(r1.final_val_loss == r2.final_val_loss);
    CHECK(testing::bitwise_equal(l1.data(), l2.data()));
}

TEST_CASE("zero training steps leave the model unchanged") {
    std::string text;
    for (int i = 0; i < 40; ++i) text += "hello world ";
    const auto tok = CharTokenizer::build(text);
    const auto split = split_corpus(tok.encode(text), 0.1);
    auto m = testing::tiny_model(5, tok.size());
    const auto before = m.forward_logits(std::vector<std::size_t>{0, 1, 2});
    TrainConfig c;
    c.total_steps = 0;
    const auto r = train(m, split.train, split.val, c);
    CHECK(r.steps == 0);
    CHECK(r.curve.size() == 1);
    CHECK(testing::bitwise_equal(before.data(), m.forward_logits(std::vector<std::size_t>{0, 1, 2}).data()));
}

TEST_CASE("loss CSV layout") {
    const auto dir = std::filesystem::temp_directory_path() / "dqf_unit_csv";
    std::filesystem::create_directories(dir);
    std::vector<LossPoint> curve(2);
    curve[0].val_loss = 2.5;
    curve[1].step = 1;
    curve[1].lr = 0.1;
    curve[1].train_loss = 2.0;
    write_loss_csv((dir / "loss.csv").string(), curve);
    std::ifstream in(dir / "loss.csv");
    std::string header, first, second;
    std::getline(in, header);
    std::getline(in, first);
    std::getline(in, second);
    CHECK(header == "step,lr,train_loss,val_loss");
    CHECK(first == "0,0,,2.5");
    CHECK(second == "1,0.10000000000000001,2,");
}

TEST_CASE("training config validation") {
    TrainConfig c;
    c.warmup_frac = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.min_lr_ratio = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}
