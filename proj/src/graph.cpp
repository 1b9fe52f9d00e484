#include "evrwkv/graph.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

namespace evr {

ValuePtr leaf(Tensor t, bool requires_grad) {
    auto v = std::make_shared<Value>();
    v->t = std::move(t);
    v->requires_grad = requires_grad;
    return v;
}

ValuePtr make_node(Tensor out, std::vector<ValuePtr> parents,
                   std::function<void(Value&)> backward_fn) {
    auto v = std::make_shared<Value>();
    v->t = std::move(out);
    bool needs = false;
    for (const auto& p : parents) needs = needs || p->requires_grad;
    v->requires_grad = needs;
    if (needs) {
        v->parents = std::move(parents);
        v->backward_fn = std::move(backward_fn);
    }
    return v;
}

void backward(const ValuePtr& root) {
    if (root->t.size() != 1)
        throw std::invalid_argument("backward: root must be scalar-shaped, got " +
                                    root->t.shape_str());
    // Iterative post-order DFS producing a topological order.
    std::vector<Value*> order;
    std::unordered_set<Value*> visited;
    std::unordered_set<Value*> on_stack;
    struct Frame {
        Value* v;
        std::size_t next_child;
    };
    std::vector<Frame> stack;
    stack.push_back({root.get(), 0});
    on_stack.insert(root.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_child < f.v->parents.size()) {
            Value* child = f.v->parents[f.next_child++].get();
            if (on_stack.count(child))
                throw std::runtime_error("backward: cycle detected in graph");
            if (!visited.count(child) && child->requires_grad) {
                stack.push_back({child, 0});
                on_stack.insert(child);
            }
        } else {
            visited.insert(f.v);
            on_stack.erase(f.v);
            order.push_back(f.v);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Value* v = *it;
        if (v->backward_fn && v->grad_allocated) v->backward_fn(*v);
    }
}

}  // namespace evr
