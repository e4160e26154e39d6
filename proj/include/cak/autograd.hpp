#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "cak/error.hpp"
#include "cak/tensor.hpp"

namespace cak {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t id() const noexcept { return id_; }
    Tape* tape() const noexcept { return tape_; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

// Append-only record of primitive applications. Each recorded node keeps its
// value and an adjoint closure; backward() replays the closures in reverse.
// A tape is single-threaded.
class Tape {
public:
    using Adjoint = std::function<void(Tape&, const Tensor& out_grad)>;

    Var leaf(Tensor value, bool requires_grad = false) {
        nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, {}});
        return Var(this, nodes_.size() - 1);
    }

    Var constant(Tensor value) { return leaf(std::move(value), false); }

    /// Records an op output. The adjoint is kept only if some input needs a gradient.
    Var record(Tensor value, std::initializer_list<Var> inputs, Adjoint adjoint) {
        bool needs = false;
        for (const Var& in : inputs) {
            check_owner(in);
            needs = needs || nodes_[in.id_].requires_grad;
        }
        nodes_.push_back(Node{std::move(value), Tensor{}, needs, needs ? std::move(adjoint) : Adjoint{}});
        return Var(this, nodes_.size() - 1);
    }

    const Tensor& value(const Var& v) const {
        check_owner(v);
        return nodes_[v.id_].value;
    }
    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }

    bool requires_grad(const Var& v) const {
        check_owner(v);
        return nodes_[v.id_].requires_grad;
    }

    /// Gradient accumulated for `v` by the last backward(); zeros if none reached it.
    Tensor grad(const Var& v) const {
        check_owner(v);
        const Node& node = nodes_[v.id_];
        return node.grad.empty() && node.value.size() != 0 ? Tensor::zeros_like(node.value) : node.grad;
    }

    /// Mutable gradient buffer for an op input, or nullptr when the input
    /// does not need one. Used by adjoint closures.
    Tensor* grad_sink(std::size_t id) {
        Node& node = nodes_.at(id);
        if (!node.requires_grad) return nullptr;
        if (node.grad.empty()) node.grad = Tensor::zeros_like(node.value);
        return &node.grad;
    }

    void backward(const Var& loss) {
        check_owner(loss);
        Node& root = nodes_[loss.id_];
        if (root.value.size() != 1)
            throw ShapeError("backward requires a scalar output, got shape " + shape_str(root.value.shape()));
        for (Node& n : nodes_) n.grad = Tensor{};
        if (!root.requires_grad) return;
        root.grad = Tensor(root.value.shape(), 1.0);
        for (std::size_t i = loss.id_ + 1; i-- > 0;) {
            Node& node = nodes_[i];
            if (!node.adjoint || node.grad.empty()) continue;
            node.adjoint(*this, node.grad);
        }
    }

    std::size_t size() const noexcept { return nodes_.size(); }

    /// Negative control for gradient checking: when set, the sigmoid adjoint
    /// is perturbed so that finite-difference checks must fail.
    void set_adjoint_fault(bool on) noexcept { adjoint_fault_ = on; }
    bool adjoint_fault() const noexcept { return adjoint_fault_; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        Adjoint adjoint;
    };

    void check_owner(const Var& v) const {
        if (v.tape_ != this || v.id_ >= nodes_.size()) throw Error("variable does not belong to this tape");
    }

    std::deque<Node> nodes_;
    bool adjoint_fault_ = false;
};

inline const Tensor& Var::value() const {
    if (!tape_) throw Error("empty variable");
    return tape_->value(*this);
}

} // namespace cak
