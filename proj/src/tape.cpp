#include "ritseg/tape.hpp"

namespace ritseg {

ValueId Tape::leaf(Tensor value) {
    Node n;
    n.op_name = "leaf";
    n.requires_grad = value.requires_grad;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return static_cast<ValueId>(nodes_.size() - 1);
}

ValueId Tape::emit(const char* op_name, Tensor out, std::vector<ValueId> parents, BackwardFn fn) {
    bool rg = false;
    for (ValueId p : parents) {
        if (p >= nodes_.size()) throw Error("tape: parent id out of range");
        rg = rg || nodes_[p].requires_grad;
    }
    Node n;
    n.op_name = op_name;
    n.requires_grad = rg;
    n.value = std::move(out);
    n.parents = std::move(parents);
    if (rg) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return static_cast<ValueId>(nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(ValueId id) {
    Node& n = nodes_[id];
    if (n.grad.numel() == 0) {
        n.grad = Tensor(n.value.dims()); // zero-filled
    }
    return n.grad;
}

const Tensor& Tape::grad(ValueId id) const {
    if (!ran_backward_) throw Error("tape: grad() before backward()");
    const Node& n = nodes_[id];
    if (n.grad.numel() == 0) {
        // Not on any path to the loss: expose a zero gradient.
        const_cast<Node&>(n).grad = Tensor(n.value.dims());
    }
    return n.grad;
}

void Tape::backward(ValueId loss) {
    if (loss >= nodes_.size()) throw Error("backward: unknown loss id");
    if (!nodes_[loss].value.is_scalar())
        throw Error("backward: loss must be scalar, got dims " + nodes_[loss].value.dims_str());

    // Mark nodes that can influence the loss.
    std::vector<char> reachable(nodes_.size(), 0);
    std::vector<ValueId> stack{loss};
    reachable[loss] = 1;
    while (!stack.empty()) {
        ValueId id = stack.back();
        stack.pop_back();
        for (ValueId p : nodes_[id].parents) {
            if (!reachable[p] && nodes_[p].requires_grad) {
                reachable[p] = 1;
                stack.push_back(p);
            }
        }
    }

    grad_buffer(loss)[0] = 1.0f;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        ValueId id = static_cast<ValueId>(i);
        Node& n = nodes_[id];
        if (!reachable[id] || !n.backward) continue;
        if (n.grad.numel() == 0) continue; // reachable but received no gradient
        n.backward(*this, id);
    }
    ran_backward_ = true;
}

} // namespace ritseg
