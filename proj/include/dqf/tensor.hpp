#pragma once

// Dense row-major tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared node. Leaves (parameters, inputs)
// are created directly; every op result produced while a Tape is active and
// at least one input requires a gradient is recorded on that tape together
// with its backward closure. Recording order is creation order, which is a
// topological order of the graph.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dqf::ad {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first written
    bool requires_grad = false;
    bool leaf = true;
    std::function<void()> backward;

    std::vector<double>& ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

class Tensor {
   public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }
    // Extent of the last axis, and the product of all others.
    std::size_t cols() const;
    std::size_t rows() const;

    std::span<const double> data() const { return node_->value; }
    // Mutable storage; only meaningful on leaves (optimizer updates, init).
    std::span<double> mutable_data() { return node_->value; }
    double operator[](std::size_t i) const { return node_->value[i]; }
    double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    bool is_leaf() const { return node_->leaf; }
    void set_requires_grad(bool on);
    // Gradient accumulated so far; all zeros if none has been written.
    std::vector<double> grad() const;
    std::span<double> mutable_grad() { return node_->ensure_grad(); }
    void zero_grad();

    // Copy of the value as a fresh leaf with no history.
    Tensor detach(bool requires_grad = false) const;
    bool all_finite() const;

    const std::shared_ptr<Node>& node() const { return node_; }
    Node* raw() const { return node_.get(); }

   private:
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
    std::shared_ptr<Node> node_;

    friend Tensor make_result(Shape, std::vector<double>, std::initializer_list<const Tensor*>,
                              const std::function<std::function<void()>(Node*)>&);
};

// Creates an op output. If a tape is active and any input requires a
// gradient, `make_backward(out)` is called to build the closure, and the
// node is recorded. Closures read out->grad and accumulate into inputs.
Tensor make_result(Shape shape, std::vector<double> value,
                   std::initializer_list<const Tensor*> inputs,
                   const std::function<std::function<void()>(Node*)>& make_backward);

class Tape {
   public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    void record(std::shared_ptr<Node> node);
    std::size_t size() const { return nodes_.size(); }

    // Accumulates d loss / d leaf into every reachable leaf that requires a
    // gradient. Intermediate gradients are reset first, so repeated calls add
    // to leaf gradients exactly once per call.
    void backward(const Tensor& loss);

   private:
    std::vector<std::shared_ptr<Node>> nodes_;
    Tape* previous_;
};

// backward() on the active tape.
void backward(const Tensor& loss);

// Temporarily detaches the active tape so ops build no history.
class NoGrad {
   public:
    NoGrad();
    ~NoGrad();
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;

   private:
    Tape* saved_;
};

}  // namespace dqf::ad
