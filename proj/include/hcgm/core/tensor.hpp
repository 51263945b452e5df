#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hcgm/errors.hpp"

namespace hcgm {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

namespace detail {

inline thread_local bool grad_mode = true;

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    int64_t numel() const { return static_cast<int64_t>(value.size()); }

    std::vector<T>& ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
        return grad;
    }
};

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode; }

// Disables graph recording for its scope (inference mode).
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_mode) { detail::grad_mode = false; }
    ~NoGradGuard() { detail::grad_mode = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Shared handle to an autograd node. Copies are shallow; clone() is deep.
template <typename T>
class Tensor {
public:
    using Scalar = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : n_(std::make_shared<detail::Node<T>>()) {
        n_->shape = std::move(shape);
        n_->value.assign(static_cast<size_t>(shape_numel(n_->shape)), fill);
    }

    static Tensor from(Shape shape, std::vector<T> data) {
        if (static_cast<int64_t>(data.size()) != shape_numel(shape))
            throw ShapeError("Tensor::from: data size does not match shape " + shape_str(shape));
        Tensor t;
        t.n_ = std::make_shared<detail::Node<T>>();
        t.n_->shape = std::move(shape);
        t.n_->value = std::move(data);
        return t;
    }

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    int ndim() const { return static_cast<int>(n_->shape.size()); }
    int64_t dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(n_->value.size()); }

    T* data() { return n_->value.data(); }
    const T* data() const { return n_->value.data(); }
    std::vector<T>& vec() { return n_->value; }
    const std::vector<T>& vec() const { return n_->value; }
    T at(int64_t i) const { return n_->value[static_cast<size_t>(i)]; }
    void set(int64_t i, T v) { n_->value[static_cast<size_t>(i)] = v; }

    Tensor& set_requires_grad(bool b) {
        n_->requires_grad = b;
        return *this;
    }
    bool requires_grad() const { return n_ && n_->requires_grad; }

    const std::vector<T>& grad() const { return n_->grad; }
    bool has_grad() const { return n_ && !n_->grad.empty(); }
    void zero_grad() {
        if (n_) n_->grad.clear();
    }

    Tensor clone() const {
        Tensor t;
        t.n_ = std::make_shared<detail::Node<T>>();
        t.n_->shape = n_->shape;
        t.n_->value = n_->value;
        return t;
    }

    void fill(T v) { std::fill(n_->value.begin(), n_->value.end(), v); }

    // Reverse-mode sweep from a scalar output.
    void backward() {
        if (!n_ || numel() != 1) throw Error("backward() requires a defined scalar tensor");
        if (!n_->requires_grad) throw Error("backward() on a tensor that does not require grad");

        std::vector<detail::Node<T>*> order;
        std::unordered_set<detail::Node<T>*> seen;
        struct Frame {
            detail::Node<T>* node;
            size_t next;
        };
        std::vector<Frame> stack;
        stack.push_back({n_.get(), 0});
        seen.insert(n_.get());
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next < f.node->parents.size()) {
                detail::Node<T>* p = f.node->parents[f.next++].get();
                if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
            } else {
                order.push_back(f.node);
                stack.pop_back();
            }
        }
        n_->ensure_grad()[0] = T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            detail::Node<T>* node = *it;
            if (node->backprop && !node->grad.empty()) node->backprop(*node);
        }
    }

    std::shared_ptr<detail::Node<T>> node() const { return n_; }

private:
    std::shared_ptr<detail::Node<T>> n_;
};

namespace detail {

// Records the backward edge for an op output when grad mode is on and any
// input requires grad. `parents` are the differentiable inputs.
template <typename T>
void wire(Tensor<T>& out, std::vector<std::shared_ptr<Node<T>>> parents,
          std::function<void(Node<T>&)> backprop) {
    if (!grad_mode) return;
    bool need = false;
    for (const auto& p : parents)
        if (p->requires_grad) need = true;
    if (!need) return;
    out.node()->requires_grad = true;
    out.node()->parents = std::move(parents);
    out.node()->backprop = std::move(backprop);
}

}  // namespace detail

}  // namespace hcgm
