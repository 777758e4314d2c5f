#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "mks2/common.hpp"

namespace mks2 {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

struct TensorNode {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad; // empty until first accumulation
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Reads this->grad, accumulates into parents' grads.
    std::function<void(TensorNode&)> backward;

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0f);
    }
};

// Dense 32-bit float tensor, row-major, with reverse-mode autodiff.
// A Tensor is a cheap handle; ops build a fresh graph every forward pass
// while leaves (parameters) persist across steps.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> n) : n_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto n = std::make_shared<TensorNode>();
        n->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0f);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from(Shape shape, std::vector<float> data, bool requires_grad = false) {
        if (shape_numel(shape) != static_cast<int64_t>(data.size()))
            throw shape_error("tensor: shape " + shape_str(shape) + " does not match " +
                              std::to_string(data.size()) + " values");
        auto n = std::make_shared<TensorNode>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(float v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    bool defined() const { return n_ != nullptr; }
    TensorNode& node() const { return *n_; }
    const std::shared_ptr<TensorNode>& ptr() const { return n_; }

    const Shape& shape() const { return n_->shape; }
    int64_t numel() const { return static_cast<int64_t>(n_->data.size()); }
    int64_t rows() const { return n_->shape.size() == 2 ? n_->shape[0] : 1; }
    int64_t cols() const { return n_->shape.back(); }
    bool requires_grad() const { return n_->requires_grad; }

    float* data() { return n_->data.data(); }
    const float* data() const { return n_->data.data(); }
    std::vector<float>& vec() { return n_->data; }
    const std::vector<float>& vec() const { return n_->data; }

    float at(int64_t i) const { return n_->data[static_cast<size_t>(i)]; }
    float at(int64_t r, int64_t c) const {
        return n_->data[static_cast<size_t>(r * n_->shape[1] + c)];
    }
    float item() const {
        if (numel() != 1) throw shape_error("tensor: item() on non-scalar " + shape_str(shape()));
        return n_->data[0];
    }

    const std::vector<float>& grad() const { return n_->grad; }
    float grad_at(int64_t i) const { return n_->grad.empty() ? 0.0f : n_->grad[static_cast<size_t>(i)]; }
    void zero_grad() {
        if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), 0.0f);
    }

    // Reverse-mode sweep from a scalar root. Gradients accumulate into every
    // requires_grad node reachable from the root, adding onto whatever is
    // already in .grad (callers zero leaf grads between optimizer steps).
    void backward() const {
        if (numel() != 1) throw shape_error("backward: root must be scalar, got " + shape_str(shape()));
        if (!n_->requires_grad) throw contract_error("backward: root does not require grad");

        std::vector<TensorNode*> order = topo_order_();
        n_->ensure_grad();
        n_->grad[0] += 1.0f;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            TensorNode* node = *it;
            if (node->backward && !node->grad.empty()) node->backward(*node);
        }
        for (TensorNode* node : order) {
            for (float g : node->grad) {
                if (!std::isfinite(g)) {
                    throw numeric_error(std::string("backward: non-finite gradient at op '") +
                                        node->op + "'");
                }
            }
        }
    }

private:
    // Iterative post-order DFS over requires_grad ancestry.
    std::vector<TensorNode*> topo_order_() const {
        std::vector<TensorNode*> order;
        std::unordered_set<TensorNode*> visited;
        std::vector<std::pair<TensorNode*, size_t>> stack;
        stack.emplace_back(n_.get(), 0);
        visited.insert(n_.get());
        while (!stack.empty()) {
            auto& [node, idx] = stack.back();
            bool descended = false;
            while (idx < node->parents.size()) {
                TensorNode* p = node->parents[idx++].get();
                if (p->requires_grad && !visited.count(p)) {
                    visited.insert(p);
                    stack.emplace_back(p, 0);
                    descended = true;
                    break;
                }
            }
            if (!descended && idx >= node->parents.size()) {
                order.push_back(node);
                stack.pop_back();
            }
        }
        return order;
    }

    std::shared_ptr<TensorNode> n_;
};

// Fail-fast NaN policy: every op's forward output is checked at the boundary.
inline void check_finite(const TensorNode& n) {
    for (float v : n.data) {
        if (!std::isfinite(v))
            throw numeric_error(std::string("op '") + n.op + "' produced a non-finite value");
    }
}

inline Tensor make_node(const char* op, Shape shape, std::vector<float> data,
                        std::vector<std::shared_ptr<TensorNode>> parents,
                        std::function<void(TensorNode&)> backward) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->op = op;
    bool rg = false;
    for (const auto& p : parents) rg = rg || p->requires_grad;
    n->requires_grad = rg;
    if (rg) {
        n->parents = std::move(parents);
        n->backward = std::move(backward);
    }
    check_finite(*n);
    return Tensor(std::move(n));
}

} // namespace mks2
