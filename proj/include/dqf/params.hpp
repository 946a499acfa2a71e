#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "dqf/tensor.hpp"

namespace dqf {

// A trainable leaf with a stable name (used for checkpoints and optimizer
// state) and whether decoupled weight decay applies to it.
struct NamedParam {
    std::string name;
    ad::Tensor tensor;
    bool decay = true;
};

using ParamList = std::vector<NamedParam>;

inline std::size_t count_parameters(const ParamList& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.tensor.size();
    return n;
}

using Rng = std::mt19937_64;

inline ad::Tensor normal_tensor(ad::Shape shape, double stddev, Rng& rng, bool requires_grad = true) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(ad::element_count(shape));
    for (auto& x : v) x = dist(rng);
    return ad::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline ad::Tensor uniform_tensor(ad::Shape shape, double bound, Rng& rng, bool requires_grad = true) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(ad::element_count(shape));
    for (auto& x : v) x = dist(rng);
    return ad::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

}  // namespace dqf
