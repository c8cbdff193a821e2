#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "misr/common.hpp"

namespace misr {

// Reverse-mode autodiff over eagerly evaluated dense tensors.
//
// Every op produces a fresh Node; when grad recording is on and an input is
// attached to the graph, the result node keeps shared ownership of its parents
// plus a backward rule. backward(loss) replays the recorded graph once in
// reverse topological order. Values are immutable after the op that produced
// them, so tensors are safe to read from any thread; a graph belongs to the
// single thread that built it.

template <typename T>
struct Node {
    static_assert(std::is_floating_point_v<T>);

    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated on demand during backward
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backward_fn;

    bool wants_grad() const { return requires_grad || backward_fn != nullptr; }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }

    void accumulate(const std::vector<T>& g) {
        ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
    }
};

// Thread-local switch; ops record backward rules only while enabled.
class GradMode {
public:
    static bool enabled() { return flag(); }
    static void set(bool on) { flag() = on; }

private:
    static bool& flag() {
        static thread_local bool on = true;
        return on;
    }
};

struct NoGradGuard {
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set(false); }
    ~NoGradGuard() { GradMode::set(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

template <typename T>
class Tensor {
public:
    Tensor() : node_(std::make_shared<Node<T>>()) {}

    explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<Node<T>>()) {
        node_->shape = std::move(shape);
        node_->value.assign(numel(node_->shape), fill);
    }

    Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<Node<T>>()) {
        require_dims(numel(shape) == values.size(),
                     "tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
        node_->shape = std::move(shape);
        node_->value = std::move(values);
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
    static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }

    template <typename Fn>
    static Tensor from_fn(Shape shape, Fn&& fn) {
        Tensor t(shape);
        for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = fn(i);
        return t;
    }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t size() const { return node_->value.size(); }

    T* data() { return node_->value.data(); }
    const T* data() const { return node_->value.data(); }
    std::vector<T>& values() { return node_->value; }
    const std::vector<T>& values() const { return node_->value; }

    T& operator[](std::size_t i) { return node_->value[i]; }
    const T& operator[](std::size_t i) const { return node_->value[i]; }

    T at(std::size_t i, std::size_t j) const { return node_->value[i * dim(1) + j]; }
    T at(std::size_t c, std::size_t y, std::size_t x) const {
        return node_->value[(c * dim(1) + y) * dim(2) + x];
    }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool on = true) {
        node_->requires_grad = on;
        return *this;
    }

    bool tracked() const { return node_->wants_grad(); }

    bool has_grad() const { return node_->grad.size() == node_->value.size(); }
    const std::vector<T>& grad() const { return node_->grad; }
    std::vector<T>& grad() { return node_->grad; }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    // Values only, detached from the graph.
    Tensor detach() const {
        Tensor t;
        t.node_->shape = node_->shape;
        t.node_->value = node_->value;
        return t;
    }

    bool all_finite() const {
        for (T v : node_->value)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::shared_ptr<Node<T>>& node() { return node_; }
    const std::shared_ptr<Node<T>>& node() const { return node_; }
    Node<T>* raw() const { return node_.get(); }

private:
    std::shared_ptr<Node<T>> node_;
};

// Records the executed subgraph below a root as an explicit schedule:
// topological order over the op nodes, replayed exactly once in reverse.
template <typename T>
class GradTape {
public:
    explicit GradTape(const std::shared_ptr<Node<T>>& root) {
        std::unordered_set<const Node<T>*> visited;
        std::vector<std::pair<Node<T>*, std::size_t>> stack;
        stack.emplace_back(root.get(), 0);
        visited.insert(root.get());
        while (!stack.empty()) {
            auto& [node, next_parent] = stack.back();
            if (next_parent < node->parents.size()) {
                Node<T>* p = node->parents[next_parent++].get();
                if (visited.insert(p).second) stack.emplace_back(p, 0);
            } else {
                order_.push_back(node);  // post-order: parents precede node
                stack.pop_back();
            }
        }
    }

    // Seeds the root with unit gradient and runs each backward rule once.
    void run(Node<T>& root) {
        root.ensure_grad();
        std::fill(root.grad.begin(), root.grad.end(), T(1));
        for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
            Node<T>* n = *it;
            if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(*n);
        }
    }

    const std::vector<Node<T>*>& order() const { return order_; }

private:
    std::vector<Node<T>*> order_;
};

// Populates .grad on every requires_grad leaf reachable from loss.
template <typename T>
void backward(const Tensor<T>& loss) {
    require(loss.size() == 1, "backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    GradTape<T> tape(loss.node());
    tape.run(*loss.node());
}

namespace detail {

// True when the op must record a backward rule.
template <typename T, typename... Ts>
bool recording(const Tensor<T>& first, const Ts&... rest) {
    if (!GradMode::enabled()) return false;
    return (first.tracked() || ... || rest.tracked());
}

template <typename T>
bool recording_any(const std::vector<Tensor<T>>& xs) {
    if (!GradMode::enabled()) return false;
    for (const auto& x : xs)
        if (x.tracked()) return true;
    return false;
}

}  // namespace detail

}  // namespace misr
