#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "ritseg/tensor.hpp"

namespace ritseg {

using ValueId = std::uint32_t;

/// Append-only record of primitive applications. Creation order is the
/// topological order; backward() walks it in reverse. One tape per forward
/// pass; single writer.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, ValueId self)>;

    /// Registers an input tensor (parameter or data) as a tape leaf.
    ValueId leaf(Tensor value);

    /// Records an op result. Gradient tracking is inherited from parents.
    ValueId emit(const char* op_name, Tensor out, std::vector<ValueId> parents, BackwardFn fn);

    /// Invalidated by any later leaf()/emit() call.
    const Tensor& value(ValueId id) const { return nodes_[id].value; }
    bool requires_grad(ValueId id) const { return nodes_[id].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    /// Accumulated gradient; zero tensor for nodes on no path to the loss.
    /// Only valid after backward().
    const Tensor& grad(ValueId id) const;

    /// Gradient accumulation target used by backward functions.
    Tensor& grad_buffer(ValueId id);

    /// Reverse sweep from a scalar loss. Gradients sum over all uses.
    void backward(ValueId loss);

private:
    struct Node {
        const char* op_name;
        Tensor value;
        Tensor grad; // empty until backward allocates it
        std::vector<ValueId> parents;
        BackwardFn backward;
        bool requires_grad;
    };
    std::vector<Node> nodes_;
    bool ran_backward_ = false;
};

} // namespace ritseg
