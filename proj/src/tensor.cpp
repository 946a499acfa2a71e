#include "dqf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dqf/error.hpp"

namespace dqf::ad {
namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::size_t element_count(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const std::size_t n = element_count(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape.empty()) shape = {1};
    for (auto e : shape)
        if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_string(shape));
    if (element_count(shape) != values.size())
        throw DimensionError("tensor " + shape_string(shape) + " given " +
                             std::to_string(values.size()) + " elements");
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

std::size_t Tensor::cols() const { return node_->shape.back(); }

std::size_t Tensor::rows() const { return size() / cols(); }

double Tensor::item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
}

void Tensor::set_requires_grad(bool on) {
    if (!node_->leaf) throw ContractError("requires_grad can only be toggled on leaves");
    node_->requires_grad = on;
}

std::vector<double> Tensor::grad() const {
    if (node_->grad.size() != node_->value.size()) return std::vector<double>(size(), 0.0);
    return node_->grad;
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach(bool requires_grad) const { return from(shape(), node_->value, requires_grad); }

bool Tensor::all_finite() const {
    return std::all_of(node_->value.begin(), node_->value.end(),
                       [](double v) { return std::isfinite(v); });
}

Tensor make_result(Shape shape, std::vector<double> value,
                   std::initializer_list<const Tensor*> inputs,
                   const std::function<std::function<void()>(Node*)>& make_backward) {
    Tensor out = Tensor::from(std::move(shape), std::move(value));
    Tape* tape = Tape::active();
    if (!tape) return out;
    const bool track = std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) {
        return t->defined() && t->requires_grad();
    });
    if (!track) return out;
    out.node_->requires_grad = true;
    out.node_->leaf = false;
    out.node_->backward = make_backward(out.node_.get());
    tape->record(out.node_);
    return out;
}

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() {
    // Drop closures so the graph no longer pins its inputs.
    for (auto& n : nodes_) n->backward = nullptr;
    g_active_tape = previous_;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::shared_ptr<Node> node) { nodes_.push_back(std::move(node)); }

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
        throw ContractError("backward() needs a scalar loss, got " +
                            (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
    auto it = std::find(nodes_.rbegin(), nodes_.rend(), loss.node());
    if (it == nodes_.rend()) throw ContractError("loss is not recorded on the active tape");
    for (auto& n : nodes_) {
        auto& g = n->ensure_grad();
        std::fill(g.begin(), g.end(), 0.0);
    }
    loss.node()->grad[0] = 1.0;
    for (; it != nodes_.rend(); ++it)
        if ((*it)->backward) (*it)->backward();
}

void backward(const Tensor& loss) {
    Tape* tape = Tape::active();
    if (!tape) throw ContractError("backward() called with no active tape");
    tape->backward(loss);
}

NoGrad::NoGrad() : saved_(g_active_tape) { g_active_tape = nullptr; }

NoGrad::~NoGrad() { g_active_tape = saved_; }

}  // namespace dqf::ad
