#pragma once

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "swm/autodiff/tensor.hpp"

namespace swm::ad {

template <class T>
class Graph;

/// Handle to a value recorded on a Graph.
template <class T>
struct Var {
    Graph<T>* graph = nullptr;
    std::size_t id = 0;

    const Tensor<T>& value() const { return graph->value(id); }
    const Shape& shape() const { return graph->value(id).shape; }
};

/// Tape of operations in execution order. Backward walks the tape in reverse,
/// visiting each node once; gradients of nodes used several times accumulate.
template <class T>
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, std::size_t self)>;

    Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }

    /// Registers a trainable tensor. Registering the same tensor twice yields the same node.
    Var<T> param(Tensor<T>& tensor) {
        if (auto it = param_ids_.find(&tensor); it != param_ids_.end()) return {this, it->second};
        Tensor<T> copy(tensor.shape, tensor.data);
        auto v = push(std::move(copy), true, nullptr);
        nodes_[v.id].param = &tensor;
        param_ids_.emplace(&tensor, v.id);
        return v;
    }

    Var<T> record(Tensor<T> value, bool needs_grad, BackwardFn backward) {
        return push(std::move(value), needs_grad, std::move(backward));
    }

    const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
    bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
    std::size_t size() const { return nodes_.size(); }

    /// Gradient buffer of a node, allocated zeroed on first use.
    std::vector<T>& grad(std::size_t id) {
        auto& n = nodes_[id];
        if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
        return n.grad;
    }
    bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

    /// Populates `grad` on every registered parameter tensor; unused parameters receive zeros.
    void backward(Var<T> loss) {
        if (loss.graph != this) fail(ErrorCode::InvalidArgument, "loss belongs to a different graph");
        if (nodes_[loss.id].value.size() != 1) {
            fail(ErrorCode::NotScalar, "backward needs a scalar loss, got shape " + shape_str(nodes_[loss.id].value.shape));
        }
        for (auto& n : nodes_) n.grad.clear();
        grad(loss.id)[0] = T(1);
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            auto& n = nodes_[i];
            if (n.backward && !n.grad.empty()) n.backward(*this, i);
        }
        for (auto& n : nodes_) {
            if (n.param == nullptr) continue;
            n.param->grad = n.grad.empty() ? std::vector<T>(n.value.size(), T(0)) : n.grad;
        }
    }

    /// Running hash of the activation pattern of piecewise-linear ops; changes when
    /// an input crosses a kink. Used by the gradient checker.
    std::uint64_t kink_signature() const { return kink_hash_; }
    void mix_kink(bool positive) {
        kink_hash_ ^= positive ? 0x9e3779b97f4a7c15ull : 0x7f4a7c159e3779b9ull;
        kink_hash_ *= 0x100000001b3ull;
    }

private:
    struct Node {
        Tensor<T> value;
        std::vector<T> grad;
        bool needs_grad = false;
        BackwardFn backward;
        Tensor<T>* param = nullptr;
    };

    Var<T> push(Tensor<T> value, bool needs_grad, BackwardFn backward) {
        nodes_.push_back(Node{std::move(value), {}, needs_grad, std::move(backward), nullptr});
        return {this, nodes_.size() - 1};
    }

    std::vector<Node> nodes_;
    std::unordered_map<const Tensor<T>*, std::size_t> param_ids_;
    std::uint64_t kink_hash_ = 0xcbf29ce484222325ull;
};

} // namespace swm::ad
