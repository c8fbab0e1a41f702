#pragma once

// Define-by-run reverse-mode differentiation. Every op returns a Var whose
// node remembers its inputs and a closure that pushes the node's gradient
// into them. backward() runs the closures in reverse topological order and
// then releases the graph, so a second backward on the same loss is an error.

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "metaprune/tensorcore/tensor.hpp"

namespace metaprune::tensorcore {

class AutogradError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

struct Node {
    Tensor tensor;
    bool requires_grad = false;
    bool is_leaf = true;
    bool consumed = false;
    std::string op;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward_fn;
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    /// Leaf that never receives gradients.
    static Var constant(Tensor value);
    /// Trainable leaf; gradients accumulate until zero_grad.
    static Var parameter(Tensor value);

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->tensor; }
    Tensor& value() { return node_->tensor; }
    const Shape& shape() const { return node_->tensor.shape(); }
    std::span<const real> grad() const { return node_->tensor.grad(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Disables graph recording on this thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

/// Builds an op result. When recording is on and any input needs gradients the
/// closure is attached; otherwise the result is a plain constant.
Var make_result(Tensor value, std::vector<Var> inputs, std::string op, std::function<void(Node&)> backward_fn);

/// Gradient buffer of an input inside a backward closure (allocated on first use).
std::span<real> input_grad(Node& self, std::size_t i);

void backward(const Var& loss);

void zero_grad(const std::vector<Var>& params);

}  // namespace metaprune::tensorcore
