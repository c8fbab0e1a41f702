#include "metaprune/tensorcore/autograd.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <unordered_set>

namespace metaprune::tensorcore {

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
    g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() {
    g_grad_enabled = previous_;
}

bool grad_enabled() {
    return g_grad_enabled;
}

Var Var::constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->tensor = std::move(value);
    n->op = "constant";
    return Var(std::move(n));
}

Var Var::parameter(Tensor value) {
    auto n = std::make_shared<Node>();
    n->tensor = std::move(value);
    n->tensor.ensure_grad();
    n->requires_grad = true;
    n->op = "parameter";
    return Var(std::move(n));
}

Var make_result(Tensor value, std::vector<Var> inputs, std::string op, std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->tensor = std::move(value);
    n->op = std::move(op);
    const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
    if (g_grad_enabled && any) {
        n->requires_grad = true;
        n->is_leaf = false;
        n->backward_fn = std::move(backward_fn);
        n->inputs.reserve(inputs.size());
        for (auto& v : inputs) n->inputs.push_back(v.node());
    }
    return Var(std::move(n));
}

std::span<real> input_grad(Node& self, std::size_t i) {
    auto& in = self.inputs.at(i);
    in->tensor.ensure_grad();
    return in->tensor.grad();
}

void backward(const Var& loss) {
    if (!loss.defined()) throw AutogradError("backward on an undefined value");
    Node* root = loss.node().get();
    if (root->consumed) throw AutogradError("backward called twice; run a new forward pass first");
    if (!root->requires_grad || root->is_leaf) {
        throw AutogradError(fmt::format("backward on a detached value (op '{}'): no recorded forward pass", root->op));
    }
    if (root->tensor.size() != 1) {
        throw AutogradError(fmt::format("backward needs a scalar loss, got shape {}", shape_string(root->tensor.shape())));
    }

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && !child->is_leaf && visited.insert(child).second) {
                if (child->consumed) throw AutogradError("graph already consumed by an earlier backward");
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : order) n->tensor.zero_grad();
    root->tensor.grad()[0] = real{1};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
    for (Node* n : order) {
        n->consumed = true;
        n->backward_fn = nullptr;
        n->inputs.clear();
        if (n != root) n->tensor.drop_grad();
    }
}

void zero_grad(const std::vector<Var>& params) {
    for (const auto& p : params) p.node()->tensor.zero_grad();
}

}  // namespace metaprune::tensorcore
