#include "aerialgen/nn/autograd.hpp"

#include <unordered_set>

#include "aerialgen/core/error.hpp"

namespace aerialgen::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor& Node::grad_buffer() {
    if (grad.empty()) grad = Tensor(value.shape());
    return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value         = std::move(value);
    node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
    if (node_) node_->grad = Tensor();
}

void Var::backward() {
    if (!node_) throw ShapeError("backward on undefined Var");
    if (node_->value.numel() != 1) throw ShapeError("backward requires a single-element output");
    if (!node_->requires_grad) return;

    // Iterative post-order DFS to get a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->inputs.size()) {
            Node* child = n->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->grad = Tensor(node_->value.shape(), 1.0f);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
    for (Node* n : order) {
        if (n->backward) {
            n->backward = nullptr;
            n->inputs.clear();
            n->grad = Tensor();
        }
    }
}

namespace {

template <class Range>
Var make_result_impl(Tensor value, const Range& inputs, std::function<void(Node&)> backward) {
    bool needs = false;
    if (grad_enabled()) {
        for (const Var& v : inputs) needs = needs || v.requires_grad();
    }
    Var out(std::move(value), needs);
    if (needs) {
        auto& node = *out.node();
        node.inputs.reserve(inputs.size());
        for (const Var& v : inputs) node.inputs.push_back(v.node());
        node.backward = std::move(backward);
    }
    return out;
}

}  // namespace

Var make_result(Tensor value, std::initializer_list<Var> inputs, std::function<void(Node&)> backward) {
    return make_result_impl(std::move(value), inputs, std::move(backward));
}

Var make_result(Tensor value, const std::vector<Var>& inputs, std::function<void(Node&)> backward) {
    return make_result_impl(std::move(value), inputs, std::move(backward));
}

}  // namespace aerialgen::nn
