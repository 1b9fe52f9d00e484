#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "evrwkv/tensor.hpp"

namespace evr {

// Reverse-mode tape node. Each node owns its forward result; the backward
// closure reads this node's grad and accumulates into the parents' grads.
struct Value;
using ValuePtr = std::shared_ptr<Value>;

struct Value {
    Tensor t;
    Tensor grad;  // allocated lazily, same shape as t
    bool requires_grad = false;
    bool grad_allocated = false;
    std::vector<ValuePtr> parents;
    std::function<void(Value&)> backward_fn;

    Tensor& ensure_grad() {
        if (!grad_allocated) {
            grad = Tensor::zeros(t.shape);
            grad_allocated = true;
        }
        return grad;
    }
    void zero_grad() {
        grad_allocated = false;
        grad = Tensor{};
    }
};

// Leaf with no history. Parameters set requires_grad.
ValuePtr leaf(Tensor t, bool requires_grad = false);
inline ValuePtr constant(Tensor t) { return leaf(std::move(t), false); }

// Interior node. If no parent requires a gradient the history is dropped.
ValuePtr make_node(Tensor out, std::vector<ValuePtr> parents,
                   std::function<void(Value&)> backward_fn);

// Reverse sweep from a scalar-shaped root. Each reachable node is visited
// exactly once; gradients accumulate additively across fan-out.
void backward(const ValuePtr& root);

}  // namespace evr
