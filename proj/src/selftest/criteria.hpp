#pragma once

// The acceptance criteria as runnable checks. Each produces one PASS/FAIL
// line with the measured quantities; a criterion also fails if it exceeds
// its runtime budget.

#include <functional>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "dqf/model.hpp"
#include "dqf/tokenizer.hpp"

namespace dqf::selftest {

struct Context {
    std::string work_dir;          // scratch space for checkpoints
    std::ostream* log = nullptr;   // progress messages, if set

    // The memorization model is shared by the training and sensitivity
    // checks; whichever runs first trains it.
    std::shared_ptr<OdeModel> memo_model;
    CharTokenizer memo_tok;
    double memo_loss = 0.0;
    double memo_seconds = 0.0;
};

struct Result {
    int id = 0;
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
    double budget = 0.0;
};

struct Criterion {
    int id;
    std::string name;
    double budget_seconds;
    std::function<Result(Context&)> run;
};

const std::vector<Criterion>& criteria();
// All criteria, or only the listed ids, in order.
std::vector<Result> run(Context& ctx, const std::vector<int>& only = {});
std::string format(const Result& r);

// The memorization model (trained on first use).
const OdeModel& memorization_model(Context& ctx);

}  // namespace dqf::selftest
