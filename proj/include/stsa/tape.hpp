#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "stsa/parameter_store.hpp"
#include "stsa/tensor.hpp"

namespace stsa {

template <typename T>
class Tape;

/// Handle to a value recorded on a tape. Cheap to copy; valid as long as the
/// tape that produced it.
template <typename T>
class Var {
public:
    Var() = default;
    Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape<T>& tape() const {
        if (!tape_) throw ContractError("use of an unbound Var");
        return *tape_;
    }
    std::size_t id() const noexcept { return id_; }
    bool bound() const noexcept { return tape_ != nullptr; }
    const Tensor<T>& value() const { return tape().value(id_); }
    const Shape& shape() const { return value().shape(); }

private:
    Tape<T>* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Append-only record of a forward computation for reverse-mode
/// differentiation. Node ids are assigned in creation order, so every node's
/// inputs precede it and a reverse sweep over ids is a valid topological order.
///
/// A tape belongs to one thread and one forward/backward pass.
template <typename T>
class Tape {
public:
    /// Receives the tape, the node's own output value and the gradient flowing
    /// into it; adds into the gradient slots of the node's inputs.
    using BackwardFn = std::function<void(Tape&, const Tensor<T>& out, const Tensor<T>& grad)>;

    Tape() = default;
    /// With gradients disabled, parameters enter as constants and no backward
    /// rules are kept: an inference-only tape.
    explicit Tape(bool gradients) : gradients_(gradients) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf that never receives a gradient.
    Var<T> constant(Tensor<T> value) { return push(std::move(value), false, {}); }

    /// Leaf that receives a gradient (readable through grad() after backward).
    Var<T> variable(Tensor<T> value) { return push(std::move(value), true, {}); }

    /// Leaf bound to a store entry; backward() adds its gradient into the
    /// entry's grad slot. Repeated requests for one name return the same Var.
    Var<T> parameter(ParameterStore<T>& store, const std::string& name) {
        if (auto it = bound_.find(name); it != bound_.end()) return Var<T>(this, it->second);
        Var<T> v = push(store.value(name), gradients_, {});
        bound_.emplace(name, v.id());
        if (gradients_) bindings_.push_back({v.id(), &store.at(name)});
        return v;
    }

    /// Records an operation output. The backward rule is dropped when no input
    /// requires a gradient.
    Var<T> record(Tensor<T> value, std::vector<Var<T>> inputs, BackwardFn backward,
                  std::string_view op_name = "op") {
#ifdef STSA_CHECK_FINITE
        require_finite(value, op_name);
#else
        (void)op_name;
#endif
        bool needs = false;
        for (const auto& in : inputs) {
            if (&in.tape() != this) throw ContractError("operands recorded on different tapes");
            needs = needs || requires_grad_[in.id()];
        }
        return push(std::move(value), needs, needs ? std::move(backward) : BackwardFn{});
    }

    const Tensor<T>& value(std::size_t id) const { return values_.at(id); }
    bool requires_grad(std::size_t id) const { return requires_grad_.at(id); }
    std::size_t size() const noexcept { return values_.size(); }

    bool gradients_enabled() const noexcept { return gradients_; }
    bool has_grad(const Var<T>& v) const { return has_grad_.at(v.id()); }

    /// Gradient of the last backward() w.r.t. v; zeros if v was not reached.
    Tensor<T> grad(const Var<T>& v) const {
        if (v.id() < has_grad_.size() && has_grad_[v.id()]) return grads_[v.id()];
        return Tensor<T>(value(v.id()).shape());
    }

    /// Mutable gradient slot of a node, zero-initialised on first use. Backward
    /// rules write into it. Returns nullptr for nodes that need no gradient.
    Tensor<T>* grad_slot(std::size_t id) {
        if (!requires_grad_[id]) return nullptr;
        if (!has_grad_[id]) {
            grads_[id] = Tensor<T>(values_[id].shape());
            has_grad_[id] = true;
        }
        return &grads_[id];
    }

    void accumulate(std::size_t id, const Tensor<T>& g) {
        Tensor<T>* slot = grad_slot(id);
        if (!slot) return;
        if (slot->shape() != g.shape()) {
            throw DimensionError("gradient shape " + to_string(g.shape()) + " does not match value " +
                                 to_string(slot->shape()));
        }
        T* dst = slot->raw();
        const T* src = g.raw();
        for (std::size_t i = 0, n = g.size(); i < n; ++i) dst[i] += src[i];
    }

    /// Reverse sweep from a scalar loss. Gradients of parameter leaves are
    /// added to their store entries, so repeated calls accumulate there.
    void backward(const Var<T>& loss) {
        if (&loss.tape() != this) throw ContractError("loss recorded on a different tape");
        if (loss.value().size() != 1) {
            throw ContractError("backward requires a scalar loss, got shape " +
                                to_string(loss.shape()));
        }
        grads_.assign(values_.size(), Tensor<T>());
        has_grad_.assign(values_.size(), false);
        if (!requires_grad_[loss.id()]) return;
        grads_[loss.id()] = Tensor<T>(loss.shape(), T{1});
        has_grad_[loss.id()] = true;
        for (std::size_t id = loss.id() + 1; id-- > 0;) {
            if (!has_grad_[id] || !backward_[id]) continue;
            backward_[id](*this, values_[id], grads_[id]);
        }
        for (const auto& b : bindings_) {
            if (!has_grad_[b.id]) continue;
            T* dst = b.param->grad.raw();
            const T* src = grads_[b.id].raw();
            for (std::size_t i = 0, n = grads_[b.id].size(); i < n; ++i) dst[i] += src[i];
        }
    }

private:
    struct Binding {
        std::size_t id;
        Parameter<T>* param;
    };

    Var<T> push(Tensor<T> value, bool needs_grad, BackwardFn fn) {
        values_.push_back(std::move(value));
        requires_grad_.push_back(needs_grad);
        backward_.push_back(std::move(fn));
        grads_.emplace_back();
        has_grad_.push_back(false);
        return Var<T>(this, values_.size() - 1);
    }

    bool gradients_ = true;
    // deque keeps references to recorded values stable while the tape grows.
    std::deque<Tensor<T>> values_;
    std::vector<bool> requires_grad_;
    std::vector<BackwardFn> backward_;
    std::deque<Tensor<T>> grads_;
    std::vector<bool> has_grad_;
    std::unordered_map<std::string, std::size_t> bound_;
    std::vector<Binding> bindings_;
};

}  // namespace stsa
