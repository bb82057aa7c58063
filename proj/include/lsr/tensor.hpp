#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lsr {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of the backward graph. `backprop` reads this node's grad and
/// accumulates into the parents' grads.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // empty until first backward touches it
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backprop;

    int64_t numel() const { return static_cast<int64_t>(value.size()); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
    }
};

} // namespace detail

/// Dense row-major tensor of doubles with optional reverse-mode gradient
/// tracking. Values are immutable after construction; the exceptions are the
/// grad buffer and leaf parameters updated in place by the optimizer between
/// graphs (data_mut).
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t numel() const { return node_->numel(); }
    int64_t dim(size_t i) const { return node_->shape[i]; }
    size_t rank() const { return node_->shape.size(); }

    std::span<const double> data() const { return node_->value; }
    double at(int64_t i) const { return node_->value[static_cast<size_t>(i)]; }
    /// In-place access for leaf parameters (optimizer / pruning). The caller
    /// must not hold a live graph over the tensor while mutating.
    std::span<double> data_mut() { return node_->value; }

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const;
    void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

    /// Reverse-mode sweep from a scalar. Grad buffers accumulate across calls
    /// until explicitly zeroed.
    void backward() const;

    // Graph plumbing used by the op kernels.
    detail::NodePtr node() const { return node_; }
    const char* op() const { return node_->op; }
    static Tensor from_node(detail::NodePtr n);

private:
    detail::NodePtr node_;
};

/// Builds an op result node. Parent links and the backprop hook are recorded
/// only when grad recording is enabled and some parent requires grad, so
/// eval-mode forwards do not retain the graph.
Tensor make_op(const char* op, Shape shape, std::vector<double> value,
               std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backprop);

/// Disables gradient recording on this thread for its lifetime (pure value
/// evaluation: validation passes, benchmarks, finite differences).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

bool grad_enabled();

/// Throws NumericError if any element is non-finite.
void check_finite(std::span<const double> v, const char* what);

} // namespace lsr
