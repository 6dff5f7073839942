#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>

#include "stsa/fusion.hpp"
#include "stsa/self_attention.hpp"

namespace stsa {

/// Which frame of the input window the training target belongs to.
enum class Supervision { middle, last };

struct ModelConfig {
    std::size_t t_in = 32;
    std::size_t height = 48;
    std::size_t width = 32;
    std::array<std::size_t, 4> channels{8, 16, 24, 32};
    Supervision supervision = Supervision::middle;

    StsaVariant variant = StsaVariant::full;
    bool stsa_layer1 = true;
    bool stsa_layer2 = true;
    /// false replaces a branch's attention module by its middle conv alone.
    std::array<bool, 4> stsa_branches{true, true, true, true};
    bool bottleneck = true;  // first branch only
    bool attention_scaling = false;

    bool attentional_weighting = true;
    bool multiscale = true;
    FusionMode fusion = FusionMode::addition;
    bool relu_before_norm = false;

    /// T_in = 8 schedule for whole-model gradient checks: the first block keeps
    /// the temporal extent and the last pool is spatial only.
    bool micro = false;

    std::uint64_t seed = 1;

    /// ConfigError describing the first violated constraint.
    void validate() const;

    /// T_in=8, 16x16, channels 8 everywhere.
    static ModelConfig micro_config();
};

struct TrainConfig {
    std::size_t batch = 3;
    double lr = 1e-4;
    std::size_t steps = 500;
    bool lr_decay = true;

    void validate() const;
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
};

std::string to_string(Supervision s);
std::string to_string(StsaVariant v);
std::string to_string(FusionMode m);

}  // namespace stsa
