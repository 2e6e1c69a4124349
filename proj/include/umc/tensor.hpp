#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "umc/common.hpp"

namespace umc {

template <typename T>
struct TensorNode {
    std::vector<int> shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until backward touches this node
    bool requires_grad = false;
    bool on_tape = false;  // produced by a recorded op under an active tape
};

inline std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

// Shared-ownership handle over a dense row-major buffer. Copies alias the
// same storage; ops produce fresh tensors.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() : node_(std::make_shared<TensorNode<T>>()) {}

    explicit Tensor(std::vector<int> shape, bool requires_grad = false)
        : node_(std::make_shared<TensorNode<T>>()) {
        node_->shape = std::move(shape);
        long n = 1;
        for (int d : node_->shape) {
            if (d <= 0) throw ShapeError("non-positive dimension in " + shape_str(node_->shape));
            n *= d;
        }
        node_->data.assign(static_cast<size_t>(n), T(0));
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        return Tensor(std::move(shape), requires_grad);
    }

    static Tensor full(std::vector<int> shape, T v) {
        Tensor t(std::move(shape));
        std::fill(t.data().begin(), t.data().end(), v);
        return t;
    }

    static Tensor from(std::vector<int> shape, std::vector<T> values, bool requires_grad = false) {
        Tensor t(std::move(shape));
        if (values.size() != t.data().size())
            throw ShapeError("value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(t.shape()));
        t.node_->data = std::move(values);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static Tensor randn(std::vector<int> shape, Rng& rng, double stddev, bool requires_grad = false) {
        Tensor t(std::move(shape), requires_grad);
        for (auto& v : t.data()) v = static_cast<T>(rng.normal() * stddev);
        return t;
    }

    const std::vector<int>& shape() const { return node_->shape; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape.at(static_cast<size_t>(i)); }
    long numel() const { return static_cast<long>(node_->data.size()); }

    int rows() const {
        if (ndim() != 2) throw ShapeError("rows() on non-2D tensor " + shape_str(shape()));
        return node_->shape[0];
    }
    int cols() const {
        if (ndim() != 2) throw ShapeError("cols() on non-2D tensor " + shape_str(shape()));
        return node_->shape[1];
    }

    // Tensor is a shared handle; const on the handle does not protect the
    // buffer, so accessors are shallow-const like shared_ptr.
    std::vector<T>& data() const { return node_->data; }

    T& at(long i) const { return node_->data[static_cast<size_t>(i)]; }
    T& at(int i, int j) const { return node_->data[static_cast<size_t>(i) * cols() + j]; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) const { node_->requires_grad = b; }

    bool on_tape() const { return node_->on_tape; }
    void mark_on_tape() const { node_->on_tape = true; }
    bool needs_grad() const { return node_->requires_grad || node_->on_tape; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::vector<T>& grad() const {
        if (node_->grad.empty()) node_->grad.assign(node_->data.size(), T(0));
        return node_->grad;
    }
    const std::vector<T>* grad_if() const { return node_->grad.empty() ? nullptr : &node_->grad; }
    void zero_grad() const { node_->grad.clear(); }

    bool same_storage(const Tensor& o) const { return node_ == o.node_; }
    TensorNode<T>* node() const { return node_.get(); }

    bool all_finite() const {
        for (T v : node_->data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    Tensor clone() const {
        Tensor t;
        t.node_->shape = node_->shape;
        t.node_->data = node_->data;
        t.node_->requires_grad = node_->requires_grad;
        return t;
    }

private:
    std::shared_ptr<TensorNode<T>> node_;
};

// Records backward closures during forward; backward() replays them in
// reverse exactly once. Accumulation into grads is additive and the order is
// the tape order, so fixed seeds give bit-reproducible runs.
template <typename T>
class GradientTape {
public:
    GradientTape() : prev_(active_) { active_ = this; }
    ~GradientTape() { active_ = prev_; }
    GradientTape(const GradientTape&) = delete;
    GradientTape& operator=(const GradientTape&) = delete;

    static GradientTape* active() { return active_; }

    void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }

    size_t size() const { return ops_.size(); }

    void backward(Tensor<T> loss) {
        if (loss.numel() != 1)
            throw ContractError("backward requires a scalar loss, got " + shape_str(loss.shape()));
        loss.grad()[0] += T(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
        ops_.clear();
    }

private:
    std::vector<std::function<void()>> ops_;
    GradientTape* prev_;
    static inline thread_local GradientTape* active_ = nullptr;
};

}  // namespace umc
