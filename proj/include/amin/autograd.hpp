#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "amin/tensor.hpp"

// Minimal tape-free reverse-mode differentiation. Every op returns a Var whose
// node keeps its parents and a closure that pushes the node's gradient into them.
// Parameters are persistent leaf Vars with requires_grad set; their gradients
// accumulate across backward() calls until zero_grad().

namespace amin::ag {

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor<T>& ensure_grad() {
        if (grad.empty() && !value.empty()) {
            grad = Tensor<T>(value.channels(), value.height(), value.width());
        }
        return grad;
    }
};

template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    bool defined() const { return node_ != nullptr; }
    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Tensor<T>& grad() const { return node_->grad; }
    Tensor<T>& mutable_grad() { return node_->ensure_grad(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    void zero_grad() {
        if (!node_->grad.empty()) node_->grad.fill(T(0));
    }

    int channels() const { return node_->value.channels(); }
    int height() const { return node_->value.height(); }
    int width() const { return node_->value.width(); }

    const std::shared_ptr<Node<T>>& node() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

bool grad_enabled();

// Disables graph construction in its scope; results become plain leaves.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <typename T>
Var<T> constant(Tensor<T> value) {
    return Var<T>(std::move(value), false);
}

template <typename T>
Var<T> parameter(Tensor<T> value) {
    return Var<T>(std::move(value), true);
}

// Wraps an op result. The closure is dropped when grad mode is off or no parent
// needs a gradient, so inference keeps no intermediates alive.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward_fn) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    if (grad_enabled()) {
        bool any = false;
        for (const auto& p : parents) any = any || p.requires_grad();
        if (any) {
            node->requires_grad = true;
            node->parents.reserve(parents.size());
            for (auto& p : parents) node->parents.push_back(p.node());
            node->backward_fn = std::move(backward_fn);
        }
    }
    return Var<T>(std::move(node));
}

// Seeds d(root)/d(root) = 1 (root must be a single element) and propagates.
template <typename T>
void backward(const Var<T>& root);

}  // namespace amin::ag
