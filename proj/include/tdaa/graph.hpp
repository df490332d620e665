#pragma once

#include <functional>
#include <utility>

#include "tdaa/tensor.hpp"

namespace tdaa {

// Reverse-mode tape. Nodes are appended in execution order, so node ids are
// already a topological order; backward() walks them in reverse. Leaves are
// the differentiable inputs, constants take part in the forward pass only.
template <typename T>
class GraphT {
  public:
    using BackFn = std::function<void(GraphT&, int)>;

    int leaf(TensorT<T> v) {
        check_finite(v, "graph leaf");
        return push(std::move(v), {}, nullptr, true);
    }

    int constant(TensorT<T> v) {
        check_finite(v, "graph constant");
        return push(std::move(v), {}, nullptr, false);
    }

    // Used by op implementations. requires_grad is inherited from inputs.
    int node(TensorT<T> v, std::vector<int> inputs, BackFn back) {
        bool req = false;
        for (int i : inputs) req = req || requires_grad(i);
        return push(std::move(v), std::move(inputs), req ? std::move(back) : nullptr, req);
    }

    const TensorT<T>& value(int id) const { return nodes_[check_id(id)].value; }

    bool requires_grad(int id) const { return nodes_[check_id(id)].requires_grad; }

    // Gradient accumulation buffer, zero-initialized on first touch.
    TensorT<T>& grad_buf(int id) {
        check_id(id);
        if (grads_[id].data.empty()) grads_[id] = TensorT<T>::zeros(nodes_[id].value.shape);
        return grads_[id];
    }

    bool has_grad(int id) const { return !grads_[check_id(id)].data.empty(); }

    const TensorT<T>& grad(int id) const {
        if (!has_grad(id))
            throw ValueError("no gradient recorded for node " + std::to_string(id));
        return grads_[id];
    }

    TensorT<T> grad_or_zero(int id) const {
        return has_grad(id) ? grads_[id] : TensorT<T>::zeros(value(id).shape);
    }

    // d(output)/d(leaf) for every differentiable ancestor of `output`, which
    // must be scalar. Leaves not reachable from the output keep zero grads.
    void backward(int output) {
        check_id(output);
        if (value(output).numel() != 1)
            throw ShapeError("backward: output must be scalar, got shape " +
                             shape_str(value(output).shape));
        grads_.assign(nodes_.size(), TensorT<T>{});
        if (!nodes_[output].requires_grad) return;
        grad_buf(output).data[0] = T(1);
        for (int id = output; id >= 0; --id) {
            const Node& n = nodes_[id];
            if (!n.requires_grad || !n.back || grads_[id].data.empty()) continue;
            n.back(*this, id);
        }
    }

    int size() const { return static_cast<int>(nodes_.size()); }

  private:
    struct Node {
        TensorT<T> value;
        std::vector<int> inputs;
        BackFn back;
        bool requires_grad = false;
    };

    int push(TensorT<T> v, std::vector<int> inputs, BackFn back, bool req) {
        nodes_.push_back(Node{std::move(v), std::move(inputs), std::move(back), req});
        grads_.emplace_back();
        return static_cast<int>(nodes_.size()) - 1;
    }

    int check_id(int id) const {
        if (id < 0 || id >= static_cast<int>(nodes_.size()))
            throw ValueError("invalid graph node id " + std::to_string(id));
        return id;
    }

    std::vector<Node> nodes_;
    std::vector<TensorT<T>> grads_;
};

using Graph = GraphT<float>;
using Graph64 = GraphT<double>;

}  // namespace tdaa
