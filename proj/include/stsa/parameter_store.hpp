#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>

#include "stsa/tensor.hpp"

namespace stsa {

/// One trainable tensor with its gradient slot and Adam moments.
template <typename T>
struct Parameter {
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> adam_m;
    Tensor<T> adam_v;
    std::uint64_t step = 0;

    explicit Parameter(Tensor<T> v)
        : value(std::move(v)),
          grad(value.shape()),
          adam_m(value.shape()),
          adam_v(value.shape()) {}
};

/// Named trainable tensors. Iteration order is lexicographic by name, which
/// makes every sweep over the store (optimizer, checkpoint) deterministic.
template <typename T>
class ParameterStore {
public:
    using Entries = std::map<std::string, Parameter<T>>;

    Parameter<T>& add(const std::string& name, Tensor<T> value) {
        auto [it, inserted] = entries_.try_emplace(name, std::move(value));
        if (!inserted) throw ContractError("duplicate parameter name '" + name + "'");
        return it->second;
    }

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }

    Parameter<T>& at(const std::string& name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ContractError("unknown parameter '" + name + "'");
        return it->second;
    }
    const Parameter<T>& at(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ContractError("unknown parameter '" + name + "'");
        return it->second;
    }

    Tensor<T>& value(const std::string& name) { return at(name).value; }
    const Tensor<T>& value(const std::string& name) const { return at(name).value; }
    const Tensor<T>& grad(const std::string& name) const { return at(name).grad; }

    Entries& entries() noexcept { return entries_; }
    const Entries& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }

    /// Total number of scalar weights.
    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [name, p] : entries_) n += p.value.size();
        return n;
    }

    void zero_grad() {
        for (auto& [name, p] : entries_) p.grad.fill(T{0});
    }

    /// Copy with every tensor converted to another scalar type (used to run
    /// gradient checks at 64-bit from a 32-bit model).
    template <typename U>
    ParameterStore<U> cast() const {
        ParameterStore<U> out;
        for (const auto& [name, p] : entries_) {
            auto& q = out.add(name, p.value.template cast<U>());
            q.grad = p.grad.template cast<U>();
            q.adam_m = p.adam_m.template cast<U>();
            q.adam_v = p.adam_v.template cast<U>();
            q.step = p.step;
        }
        return out;
    }

private:
    Entries entries_;
};

}  // namespace stsa
