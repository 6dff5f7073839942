#pragma once

#include <cmath>
#include <string>
#include <utility>

#include "stsa/nn_ops.hpp"
#include "stsa/ops.hpp"
#include "stsa/parameter_store.hpp"
#include "stsa/rng.hpp"

namespace stsa {

/// A named 3D convolution: weights "<name>.weight" (Cout, Cin, kT, kH, kW)
/// and, when enabled, "<name>.bias" (Cout).
struct ConvLayer {
    std::string name;
    std::size_t in_channels = 1;
    ConvSpec spec;

    ConvLayer() = default;
    ConvLayer(std::string n, std::size_t in, ConvSpec s)
        : name(std::move(n)), in_channels(in), spec(s) {
        spec.validate();
    }

    std::string weight_name() const { return name + ".weight"; }
    std::string bias_name() const { return name + ".bias"; }

    Shape weight_shape() const {
        return {spec.out_channels, in_channels, spec.kernel[0], spec.kernel[1], spec.kernel[2]};
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and bias.
    template <typename T>
    void init(ParameterStore<T>& store, SplitMix64& rng) const {
        const std::size_t fan_in = in_channels * spec.kernel[0] * spec.kernel[1] * spec.kernel[2];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Tensor<T> w(weight_shape());
        for (auto& v : w.data()) v = static_cast<T>(rng.uniform(-bound, bound));
        store.add(weight_name(), std::move(w));
        if (spec.bias) {
            Tensor<T> b(Shape{spec.out_channels});
            for (auto& v : b.data()) v = static_cast<T>(rng.uniform(-bound, bound));
            store.add(bias_name(), std::move(b));
        }
    }

    template <typename T>
    Var<T> operator()(Tape<T>& tape, ParameterStore<T>& store, const Var<T>& x) const {
        Var<T> w = tape.parameter(store, weight_name());
        if (spec.bias) {
            Var<T> b = tape.parameter(store, bias_name());
            return conv3d(x, w, &b, spec.stride, spec.padding);
        }
        return conv3d<T>(x, w, nullptr, spec.stride, spec.padding);
    }
};

inline ConvSpec pointwise(std::size_t out_channels) {
    return ConvSpec{out_channels, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, true};
}

/// Layer normalisation across the channel axis of an (N,C,T,H,W) map, one
/// group per (n,t,h,w) position, with learned per-channel affine.
struct ChannelNorm {
    std::string name;
    std::size_t channels = 1;

    std::string gamma_name() const { return name + ".gamma"; }
    std::string beta_name() const { return name + ".beta"; }

    template <typename T>
    void init(ParameterStore<T>& store) const {
        store.add(gamma_name(), Tensor<T>(Shape{channels}, T{1}));
        store.add(beta_name(), Tensor<T>(Shape{channels}, T{0}));
    }

    template <typename T>
    Var<T> operator()(Tape<T>& tape, ParameterStore<T>& store, const Var<T>& x) const {
        return layer_norm(x, tape.parameter(store, gamma_name()), tape.parameter(store, beta_name()),
                          {1});
    }
};

}  // namespace stsa
