#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "stsa/fusion.hpp"
#include "stsa/layers.hpp"
#include "stsa/model_config.hpp"
#include "stsa/self_attention.hpp"

namespace stsa {

/// Closed-form shapes of every stage, batch axis 1.
struct ShapePlan {
    Shape input;                     // (1, 3, T_in, H, W)
    std::array<Shape, 4> encoder;    // block outputs
    std::array<std::size_t, 4> compress_stride;  // 0 marks a pass-through branch
    std::array<Shape, 4> compressed; // all T = 4
    std::array<Shape, 4> attended;   // channels halved
    std::array<Shape, 3> fused;      // fused[k] merges branches k+1.. into branch k
    Shape output;                    // (H, W)
};

/// Throws ConfigError when the configuration admits no valid plan.
ShapePlan derive_shape_plan(const ModelConfig& cfg);

template <typename T>
struct BranchFeatures {
    std::array<Var<T>, 4> maps;
};

/// Intermediate values of one forward pass.
template <typename T>
struct ForwardTrace {
    BranchFeatures<T> encoder;
    std::array<Var<T>, 4> compressed;
    std::array<Var<T>, 4> attended;
    Var<T> fused;
    Var<T> unnormalized;  // sigmoid output, (H, W)
};

/// Separable unit: temporal 3x1x1 conv then spatial 1x3x3 conv, each + relu.
struct SeparableUnit {
    ConvLayer temporal;
    ConvLayer spatial;

    template <typename T>
    Var<T> operator()(Tape<T>& tape, ParameterStore<T>& store, const Var<T>& x) const {
        return relu(spatial(tape, store, relu(temporal(tape, store, x))));
    }
};

class StsaNet {
public:
    explicit StsaNet(ModelConfig cfg);

    const ModelConfig& config() const noexcept { return cfg_; }
    const ShapePlan& plan() const noexcept { return plan_; }

    /// Fresh parameters drawn from the configured seed.
    template <typename T>
    ParameterStore<T> make_parameters() const;

    template <typename T>
    void init(ParameterStore<T>& store) const;

    /// (T_in, 3, H, W) frames -> (1, 3, T_in, H, W) constant on the tape.
    template <typename T>
    Var<T> input(Tape<T>& tape, const Tensor<T>& clip) const;

    template <typename T>
    BranchFeatures<T> encode(Tape<T>& tape, ParameterStore<T>& store, const Var<T>& x) const;

    template <typename T>
    std::array<Var<T>, 4> compress(Tape<T>& tape, ParameterStore<T>& store,
                                   const BranchFeatures<T>& b) const;

    template <typename T>
    std::array<Var<T>, 4> attend(Tape<T>& tape, ParameterStore<T>& store,
                                 const std::array<Var<T>, 4>& compressed) const;

    /// Top-down fusion, deepest branch first.
    template <typename T>
    Var<T> fuse(Tape<T>& tape, ParameterStore<T>& store, const std::array<Var<T>, 4>& attended) const;

    /// Upsample, collapse time, project to one channel, sigmoid. (H, W).
    template <typename T>
    Var<T> readout(Tape<T>& tape, ParameterStore<T>& store, const Var<T>& fused) const;

    /// Whole network: normalised (H, W) saliency map.
    template <typename T>
    Var<T> forward(Tape<T>& tape, ParameterStore<T>& store, const Tensor<T>& clip,
                   ForwardTrace<T>* trace = nullptr) const;

    /// Inference without gradient bookkeeping.
    template <typename T>
    Tensor<T> predict(ParameterStore<T>& store, const Tensor<T>& clip) const;

    const StsaModule& branch_module(std::size_t b) const { return branches_.at(b); }
    const AmsfStage& fusion_stage(std::size_t k) const { return fusion_.at(k); }

private:
    ModelConfig cfg_;
    ShapePlan plan_;
    ConvLayer stem_;
    std::array<std::array<SeparableUnit, 2>, 4> blocks_;
    std::array<Triple, 3> pools_;
    std::array<ConvLayer, 4> compress_;
    std::array<StsaModule, 4> branches_;
    std::array<AmsfStage, 3> fusion_;
    ConvLayer collapse_;
    ConvLayer head_;
};

/// Input window for frame i of an (L, 3, H, W) video. Middle supervision puts
/// frame i at index T_in/2 - 1, last supervision at T_in - 1; positions
/// outside the video repeat the first or last frame.
template <typename T>
Tensor<T> pad_clip_for_frame(const Tensor<T>& video, std::size_t i, std::size_t t_in,
                             Supervision supervision);

/// Source frame index for each window slot, as used by pad_clip_for_frame.
std::vector<std::size_t> window_frames(std::size_t length, std::size_t i, std::size_t t_in,
                                       Supervision supervision);

/// One map per frame. `threads` > 1 evaluates frames concurrently; results do
/// not depend on the thread count.
template <typename T>
std::vector<Tensor<T>> sliding_window_predict(const StsaNet& net, ParameterStore<T>& store,
                                              const Tensor<T>& video, std::size_t threads = 1);

}  // namespace stsa
