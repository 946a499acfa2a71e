#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dqf/model.hpp"
#include "dqf/params.hpp"
#include "dqf/tokenizer.hpp"

namespace dqf {

struct TrainConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.1;
    double warmup_frac = 0.01;
    double min_lr_ratio = 0.1;
    double grad_clip = 1.0;  // global norm; 0 disables
    std::size_t batch_size = 8;
    std::size_t total_steps = 1000;
    std::size_t seq_len = 0;  // 0: the model's max_seq_len
    std::size_t eval_interval = 100;
    std::size_t eval_windows = 32;  // 0: evaluate every window
    double val_fraction = 0.05;
    std::uint64_t seed = 1;

    void validate() const;
    std::size_t warmup_steps() const;
};

// Linear warmup from 0 to lr over warmup_steps(), then cosine decay to
// min_lr_ratio * lr at total_steps.
double lr_schedule(std::size_t step, const TrainConfig& cfg);

// Bias-corrected Adam with decoupled weight decay.
struct AdamState {
    std::vector<std::vector<double>> m, v;
    std::size_t step = 0;
};

AdamState adam_init(const ParamList& params);
// Applies one update using the gradients currently held by `params`.
// Throws DivergenceError on a non-finite gradient.
void adam_step(const ParamList& params, AdamState& state, const TrainConfig& cfg, double lr);

double global_grad_norm(const ParamList& params);
void zero_grads(const ParamList& params);

// Fixed split: the trailing val_fraction of the token stream is held out.
struct CorpusSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
};
CorpusSplit split_corpus(const std::vector<std::size_t>& ids, double val_fraction);

struct LossPoint {
    std::size_t step = 0;
    double lr = 0.0;
    double train_loss = std::numeric_limits<double>::quiet_NaN();
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    double grad_norm = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
    std::vector<LossPoint> curve;
    double initial_val_loss = 0.0;
    double final_val_loss = 0.0;
    std::size_t steps = 0;
};

using StepCallback = std::function<void(const LossPoint&)>;

// Next-token cross-entropy training of model.trainable_parameters().
TrainResult train(LanguageModel& model, std::span<const std::size_t> train_ids,
                  std::span<const std::size_t> val_ids, const TrainConfig& cfg,
                  const StepCallback& on_step = {});

// Mean next-token cross-entropy (nats) over consecutive windows of seq_len
// predictions, at most max_windows of them (0: all).
double evaluate_loss(const LanguageModel& model, std::span<const std::size_t> ids,
                     std::size_t seq_len, std::size_t max_windows = 0);
double evaluate_perplexity(const LanguageModel& model, const CharTokenizer& tok,
                           std::string_view text, std::size_t seq_len = 0,
                           std::size_t max_windows = 0);

// step,lr,train_loss,val_loss (empty cells where a value was not measured).
void write_loss_csv(const std::string& path, const std::vector<LossPoint>& curve);
void write_grad_norm_csv(const std::string& path, const std::vector<LossPoint>& curve);

std::string read_text_file(const std::string& path);

}  // namespace dqf
