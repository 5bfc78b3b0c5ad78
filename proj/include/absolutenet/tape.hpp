#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "absolutenet/tensor.hpp"

namespace absnet {

template <typename T>
class Tape;

/// Handle to a node on a tape: cheap to copy, valid for the tape's lifetime.
template <typename T>
class Value {
public:
    Value() = default;
    Value(Tape<T>* tape, std::int32_t id) : tape_(tape), id_(id) {}

    bool valid() const { return tape_ != nullptr; }
    std::int32_t id() const { return id_; }
    Tape<T>& tape() const { return *tape_; }
    const Tensor<T>& tensor() const { return tape_->value(id_); }
    const Shape& shape() const { return tensor().shape(); }

private:
    Tape<T>* tape_ = nullptr;
    std::int32_t id_ = -1;
};

/// Recorded computation graph for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so ids form a topological order and
/// backward() can walk them exactly once in reverse. Each node stores its
/// forward value plus a closure that routes the upstream gradient to the
/// node's inputs. A tape is single-threaded; independent tapes can run
/// concurrently.
template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(const Tensor<T>& upstream, Tape<T>&)>;

    Value<T> leaf(Tensor<T> value, bool requires_grad = false) {
        nodes_.push_back(Node{std::move(value), {}, nullptr, requires_grad});
        return Value<T>(this, static_cast<std::int32_t>(nodes_.size() - 1));
    }

    Value<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

    /// Record a computed node. `back` may be empty for non-differentiable ops.
    Value<T> record(Tensor<T> value, std::vector<std::int32_t> inputs, BackwardFn back) {
        bool needs = false;
        for (auto i : inputs) needs = needs || nodes_[static_cast<std::size_t>(i)].requires_grad;
        nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(back), needs});
        return Value<T>(this, static_cast<std::int32_t>(nodes_.size() - 1));
    }

    std::size_t size() const { return nodes_.size(); }

    const Tensor<T>& value(std::int32_t id) const {
        return nodes_[static_cast<std::size_t>(id)].value;
    }

    bool requires_grad(std::int32_t id) const {
        return nodes_[static_cast<std::size_t>(id)].requires_grad;
    }

    /// Reverse pass from a scalar output. Every call resets gradients first,
    /// so running it twice over the same tape gives identical results.
    void backward(Value<T> output) {
        if (output.tensor().size() != 1)
            throw std::invalid_argument("backward: output must be scalar, got shape " +
                                        shape_str(output.tensor().shape()));
        grads_.assign(nodes_.size(), Tensor<T>{});
        grads_[static_cast<std::size_t>(output.id())] =
            Tensor<T>::full(output.tensor().shape(), T{1});
        for (std::int32_t id = output.id(); id >= 0; --id) {
            Node& node = nodes_[static_cast<std::size_t>(id)];
            if (!node.requires_grad || !node.backward) continue;
            const Tensor<T>& g = grads_[static_cast<std::size_t>(id)];
            if (g.size() == 0) continue;  // no path from the output
            node.backward(g, *this);
        }
    }

    /// Gradient of the last backward() w.r.t. a node; zeros if the node never
    /// received any (unused leaves included).
    const Tensor<T>& grad(Value<T> v) {
        auto& slot = grads_.at(static_cast<std::size_t>(v.id()));
        if (slot.size() == 0) slot = Tensor<T>::zeros(v.tensor().shape());
        return slot;
    }

    /// Add `g` into a node's gradient slot. No-op for nodes that do not need
    /// gradients, so heavyweight backwards can skip work via requires_grad().
    void accumulate(std::int32_t id, const Tensor<T>& g) {
        auto& node = nodes_[static_cast<std::size_t>(id)];
        if (!node.requires_grad) return;
        auto& slot = grads_[static_cast<std::size_t>(id)];
        if (slot.size() == 0) {
            slot = g;
            return;
        }
        const std::int64_t n = slot.size();
        for (std::int64_t i = 0; i < n; ++i) slot[i] += g[i];
    }

    /// Mutable gradient buffer for in-place accumulation (materialised as
    /// zeros on first use). Caller must respect requires_grad().
    Tensor<T>& grad_buffer(std::int32_t id) {
        auto& node = nodes_[static_cast<std::size_t>(id)];
        auto& slot = grads_[static_cast<std::size_t>(id)];
        if (slot.size() == 0) slot = Tensor<T>::zeros(node.value.shape());
        return slot;
    }

private:
    struct Node {
        Tensor<T> value;
        std::vector<std::int32_t> inputs;
        BackwardFn backward;
        bool requires_grad;
    };

    std::vector<Node> nodes_;
    std::vector<Tensor<T>> grads_;
};

}  // namespace absnet
