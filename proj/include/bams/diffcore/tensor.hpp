#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "bams/error.hpp"

namespace bams {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

/// Allocator with a fixed 64-byte alignment. SIMD reductions peel a
/// prefix up to the first aligned element, so an alignment that varied per
/// allocation would make summation order, and results, run-dependent.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

/// Backing store of tensor values and gradients.
using Storage = std::vector<double, AlignedAllocator<double>>;

namespace detail {

struct Node {
    Shape shape;
    Storage value;
    Storage grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    Storage& grad_buffer() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

inline bool& grad_disabled_flag() {
    thread_local bool disabled = false;
    return disabled;
}

}  // namespace detail

/// While alive, ops on this thread produce constant results with no graph.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_disabled_flag()) { detail::grad_disabled_flag() = true; }
    ~NoGradGuard() { detail::grad_disabled_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline bool grad_enabled() { return !detail::grad_disabled_flag(); }

/// Dense row-major f64 array with an optional reverse-mode gradient.
///
/// Copies share storage; use clone() for a deep copy and detach() to cut the
/// graph. Gradients of leaves accumulate across backward() calls until
/// zero_grad().
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto n = std::make_shared<detail::Node>();
        n->value.assign(shape_numel(shape), 0.0);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from(Shape shape, const std::vector<double>& data, bool requires_grad = false) {
        return from_storage(std::move(shape), Storage(data.begin(), data.end()), requires_grad);
    }

    static Tensor from_storage(Shape shape, Storage data, bool requires_grad = false) {
        if (data.size() != shape_numel(shape))
            throw ShapeError("Tensor::from", "data length " + std::to_string(data.size()) +
                                                 " does not match shape " + shape_str(shape));
        auto n = std::make_shared<detail::Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(double v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t numel() const { return node_->value.size(); }

    std::span<const double> data() const { return node_->value; }
    std::span<double> mutable_data() { return node_->value; }
    double operator[](std::size_t i) const { return node_->value[i]; }
    double item() const {
        if (numel() != 1) throw ShapeError("Tensor::item", "tensor has " + std::to_string(numel()) + " elements");
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    /// Gradient view; all zeros when nothing has been accumulated.
    std::span<const double> grad() const { return node_->grad_buffer(); }
    std::span<double> mutable_grad() { return node_->grad_buffer(); }
    void zero_grad() { node_->grad.clear(); }

    Tensor detach() const { return from_storage(shape(), node_->value, false); }
    Tensor clone() const { return from_storage(shape(), node_->value, requires_grad()); }

    bool all_finite() const {
        for (double v : node_->value)
            if (!std::isfinite(v)) return false;
        for (double g : node_->grad)
            if (!std::isfinite(g)) return false;
        return true;
    }

    /// Reverse sweep from a scalar; leaves keep their accumulated gradients.
    void backward(double seed = 1.0) const {
        if (numel() != 1) throw ShapeError("Tensor::backward", "root must be scalar, got " + shape_str(shape()));
        if (!node_->requires_grad) return;
        std::vector<detail::Node*> order;
        std::unordered_set<detail::Node*> seen;
        std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next < n->inputs.size()) {
                detail::Node* child = n->inputs[next++].get();
                if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
        node_->grad_buffer()[0] += seed;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            detail::Node* n = *it;
            if (n->backward && !n->grad.empty()) n->backward(*n);
        }
        // interior gradients are transient
        for (detail::Node* n : order)
            if (!n->inputs.empty()) n->grad.clear();
    }

    detail::Node& node() const { return *node_; }
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

    /// Builds the result of an op. Records the graph edge only when gradients
    /// are enabled and some input requires them.
    static Tensor make_result(Shape shape, Storage value, std::vector<Tensor> inputs,
                              std::function<void(detail::Node&)> backward) {
        auto n = std::make_shared<detail::Node>();
        n->shape = std::move(shape);
        n->value = std::move(value);
        bool any = false;
        for (const auto& t : inputs) any = any || t.requires_grad();
        if (any && grad_enabled()) {
            n->requires_grad = true;
            n->inputs.reserve(inputs.size());
            for (auto& t : inputs) n->inputs.push_back(t.node_);
            n->backward = std::move(backward);
        }
        return Tensor(std::move(n));
    }

private:
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
    std::shared_ptr<detail::Node> node_;
};

}  // namespace bams
