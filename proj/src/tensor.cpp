#include "lsr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "lsr/errors.hpp"

namespace lsr {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

void check_finite(std::span<const double> v, const char* what) {
    for (double x : v) {
        if (!std::isfinite(x))
            throw NumericError(std::string(what) + ": non-finite value");
    }
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
    for (int64_t d : shape)
        require(d > 0, "tensor: extents must be positive, got " + shape_str(shape));
    require(shape_numel(shape) == static_cast<int64_t>(data.size()),
            "tensor: shape " + shape_str(shape) + " does not match data length " +
                std::to_string(data.size()));
    check_finite(data, "tensor");
    node_ = std::make_shared<detail::Node>();
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    std::vector<double> d(static_cast<size_t>(shape_numel(shape)), 0.0);
    return Tensor(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    std::vector<double> d(static_cast<size_t>(shape_numel(shape)), v);
    return Tensor(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

std::span<const double> Tensor::grad() const {
    require(!node_->grad.empty(), "tensor: gradient not populated; call backward first");
    return node_->grad;
}

Tensor Tensor::from_node(detail::NodePtr n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
}

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

Tensor make_op(const char* op, Shape shape, std::vector<double> value,
               std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backprop) {
    check_finite(value, op);
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->op = op;
    bool rg = false;
    if (g_grad_enabled)
        for (const Tensor& p : parents) rg = rg || p.requires_grad();
    n->requires_grad = rg;
    if (rg) {
        n->parents.reserve(parents.size());
        for (const Tensor& p : parents) n->parents.push_back(p.node());
        n->backprop = std::move(backprop);
    }
    return Tensor::from_node(std::move(n));
}

void Tensor::backward() const {
    require(numel() == 1, "backward: loss must be a scalar, got " + shape_str(shape()));

    // Iterative post-order topological sort over the requires_grad subgraph.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            detail::Node* p = n->parents[next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    // Each sweep propagates its own seed through fresh buffers; gradient
    // accumulated by earlier sweeps is stashed and added back afterwards.
    std::vector<std::vector<double>> stash(order.size());
    for (size_t i = 0; i < order.size(); ++i) stash[i] = std::move(order[i]->grad);

    node_->ensure_grad();
    node_->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backprop && !n->grad.empty()) n->backprop(*n);
    }

    for (size_t i = 0; i < order.size(); ++i) {
        if (stash[i].empty()) continue;
        detail::Node* n = order[i];
        n->ensure_grad();
        for (size_t j = 0; j < stash[i].size(); ++j) n->grad[j] += stash[i][j];
    }
}

} // namespace lsr
