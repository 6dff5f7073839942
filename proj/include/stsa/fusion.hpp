#pragma once

#include <cstddef>
#include <string>

#include "stsa/layers.hpp"

namespace stsa {

enum class FusionMode { addition, concatenation };

struct AmsfConfig {
    std::size_t deep_channels = 4;  // channels of the deeper input before projection
    std::size_t channels = 4;       // channels of the shallower input and of the output
    bool attentional_weighting = true;
    bool multiscale = true;
    FusionMode fusion = FusionMode::addition;
    /// Channel-weight path order: Conv, Norm, Relu, Conv by default; true swaps
    /// to Conv, Relu, Norm, Conv.
    bool relu_before_norm = false;

    /// ConfigError when the multi-scale block cannot split channels in four.
    void validate() const;
};

/// Deeper and shallower features after alignment, identical shapes.
template <typename T>
struct FusionPair {
    Var<T> high;
    Var<T> low;
};

/// Intermediate weights of the attentional fusion, for inspection.
template <typename T>
struct AmsfProbe {
    Var<T> spatial_mask;  // (N,1,4,H,W)
    Var<T> weight_high;   // (N,C,4,1,1)
    Var<T> weight_low;    // (N,C,4,1,1)
};

/// One top-down fusion stage: align, weight and fuse, then the multi-scale block.
class AmsfStage {
public:
    AmsfStage() = default;
    AmsfStage(std::string prefix, const AmsfConfig& cfg);

    template <typename T>
    void init(ParameterStore<T>& store, SplitMix64& rng) const;

    /// Projects the deeper map to the shallower channel count (1x1x1 conv) and
    /// upsamples it trilinearly to the shallower spatial size.
    template <typename T>
    FusionPair<T> align(Tape<T>& tape, ParameterStore<T>& store, const Var<T>& deep,
                        const Var<T>& shallow) const;

    /// F_M = sigmoid(conv([F_h,F_l])) * [F_h,F_l]; channel weights from F_M;
    /// F_O = F_h*W_h + F_l*W_l (or the concatenation variant). With weighting
    /// disabled, F_O = F_h + F_l.
    template <typename T>
    Var<T> weight(Tape<T>& tape, ParameterStore<T>& store, const FusionPair<T>& pair,
                  AmsfProbe<T>* probe = nullptr) const;

    /// Four branches of C/4 channels each, concatenated back to C.
    template <typename T>
    Var<T> multiscale(Tape<T>& tape, ParameterStore<T>& store, const Var<T>& x) const;

    template <typename T>
    Var<T> forward(Tape<T>& tape, ParameterStore<T>& store, const Var<T>& deep,
                   const Var<T>& shallow, AmsfProbe<T>* probe = nullptr) const;

    const AmsfConfig& config() const noexcept { return cfg_; }
    std::size_t reduced_channels() const noexcept { return reduced_; }

private:
    AmsfConfig cfg_;
    std::size_t reduced_ = 1;
    ConvLayer project_;
    ConvLayer mask_;
    ConvLayer squeeze_;
    ChannelNorm squeeze_norm_;
    ConvLayer excite_;
    ConvLayer merge_;  // concatenation variant only
    ConvLayer branch_point_, branch_spatial_, branch_cube_, branch_pool_;
};

}  // namespace stsa
