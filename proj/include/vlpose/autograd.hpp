#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vlpose/tensor.hpp"

namespace vlpose {

/// Thread-local switch for graph recording. Disabled inside NoGradGuard.
class GradMode {
public:
    static bool enabled() noexcept { return flag(); }
    static void set_enabled(bool on) noexcept { flag() = on; }

private:
    static bool& flag() noexcept {
        thread_local bool on = true;
        return on;
    }
};

class NoGradGuard {
public:
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

/// Records how close relu inputs come to the kink at zero while active.
/// Finite-difference checks use this to redraw inputs that straddle the kink.
class KinkMonitor {
public:
    static bool active() noexcept { return state().active; }
    static double min_abs() noexcept { return state().min_abs; }
    static void start() noexcept { state() = {true, std::numeric_limits<double>::infinity()}; }
    static void stop() noexcept { state().active = false; }
    static void observe(double v) noexcept {
        auto& s = state();
        s.min_abs = std::min(s.min_abs, std::abs(v));
    }

private:
    struct State {
        bool active = false;
        double min_abs = std::numeric_limits<double>::infinity();
    };
    static State& state() noexcept {
        thread_local State s;
        return s;
    }
};

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // empty until the first accumulation
    bool requires_grad = false;
    std::string op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(const Tensor<T>&)> backward_fn;

    Tensor<T>& grad_buffer() {
        if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
        return grad;
    }
};

/// Shared handle to a graph node. Leaves created with requires_grad=true are
/// parameters; results of ops record parents only when some input needs grad.
template <typename T>
class Var {
public:
    using value_type = T;

    Var() = default;
    explicit Var(Tensor<T> v, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
        node_->value = std::move(v);
        node_->requires_grad = requires_grad;
    }

    bool defined() const noexcept { return static_cast<bool>(node_); }
    explicit operator bool() const noexcept { return defined(); }

    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t numel() const { return node_->value.numel(); }

    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    bool has_grad() const { return node_->grad.shape() == node_->value.shape() && !node_->grad.empty(); }
    const Tensor<T>& grad() const { return node_->grad; }
    void zero_grad() { node_->grad = Tensor<T>(); }

    Node<T>* node() const noexcept { return node_.get(); }
    const std::shared_ptr<Node<T>>& node_ptr() const noexcept { return node_; }

    /// Reverse-mode sweep seeded with ones (the output must be a scalar).
    void backward() const {
        if (numel() != 1)
            throw DimensionError("backward() without seed needs a scalar, got " + shape_str(shape()));
        backward(Tensor<T>(shape(), T(1)));
    }

    /// Reverse-mode sweep; frees the recorded graph afterwards. Leaf grads accumulate.
    void backward(const Tensor<T>& seed) const;

    friend bool operator==(const Var& a, const Var& b) { return a.node_ == b.node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

/// Build an op result; parents and the backward closure are kept only when a
/// parent requires grad and recording is enabled.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::string op,
                   std::function<void(const Tensor<T>&)> backward_fn) {
    Var<T> out(std::move(value), false);
    bool needs = false;
    if (GradMode::enabled())
        for (const auto& p : parents) needs = needs || p.requires_grad();
    if (needs) {
        Node<T>* n = out.node();
        n->requires_grad = true;
        n->op = std::move(op);
        for (auto& p : parents) n->parents.push_back(p.node_ptr());
        n->backward_fn = std::move(backward_fn);
    }
    return out;
}

/// Gradient buffer of a parent, or nullptr if it does not participate.
template <typename T>
Tensor<T>* grad_of(const Var<T>& v) {
    return v.requires_grad() ? &v.node()->grad_buffer() : nullptr;
}

template <typename T>
void Var<T>::backward(const Tensor<T>& seed) const {
    if (seed.shape() != shape())
        throw DimensionError("seed shape " + shape_str(seed.shape()) + " != output " + shape_str(shape()));
    if (!requires_grad()) return;

    // Iterative post-order DFS -> topological order.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node<T>* p = n->parents[idx++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    auto& g = node_->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += seed[i];

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(n->grad);
    }
    // Free the graph: interior nodes drop parents, closures and grads.
    for (Node<T>* n : order) {
        if (n->backward_fn) {
            n->backward_fn = nullptr;
            n->parents.clear();
            if (n != node_.get()) n->grad = Tensor<T>();
        }
    }
}

}  // namespace vlpose
