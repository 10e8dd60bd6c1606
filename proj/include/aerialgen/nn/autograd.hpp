#pragma once

// Minimal reverse-mode automatic differentiation over Tensor values.
//
// Every op returns a Var whose node remembers its inputs and a backward
// closure, but only when gradient recording is enabled (see NoGradGuard) and
// at least one input requires a gradient. Var::backward() runs the closures
// in reverse topological order and then releases the recorded graph.

#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

#include "aerialgen/core/tensor.hpp"

namespace aerialgen::nn {

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    // Zero-initialized gradient buffer with the value's shape.
    Tensor& grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    int dim(int axis) const { return node_->value.dim(axis); }

    bool defined() const noexcept { return static_cast<bool>(node_); }
    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
    const Tensor& grad() const { return node_->grad; }
    void zero_grad();

    // Backpropagate from a single-element Var.
    void backward();

    const std::shared_ptr<Node>& node() const noexcept { return node_; }

private:
    std::shared_ptr<Node> node_;
};

bool grad_enabled() noexcept;

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&)            = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Wraps an op result. `backward` reads node.grad and accumulates into
// node.inputs[i]->grad_buffer() for inputs that require gradients.
Var make_result(Tensor value, std::initializer_list<Var> inputs, std::function<void(Node&)> backward);
Var make_result(Tensor value, const std::vector<Var>& inputs, std::function<void(Node&)> backward);

}  // namespace aerialgen::nn
