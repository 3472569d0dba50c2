#include "amin/autograd.hpp"

#include <unordered_set>

namespace amin::ag {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
void backward(const Var<T>& root) {
    if (!root.requires_grad()) return;
    if (root.value().size() != 1) throw ShapeError("backward() needs a scalar root");

    // Iterative post-order DFS; deep IDN stacks would overflow a recursive walk.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->ensure_grad()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
}

template void backward<float>(const Var<float>&);
template void backward<double>(const Var<double>&);

}  // namespace amin::ag
