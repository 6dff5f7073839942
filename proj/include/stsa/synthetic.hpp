#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "stsa/data_io.hpp"
#include "stsa/tensor.hpp"

namespace stsa {

/// A Gaussian blob moving linearly; positions reflect off the frame borders.
/// Coordinates are in pixels, velocities in pixels per frame.
struct Blob {
    double x0 = 0.0;
    double y0 = 0.0;
    double vx = 0.0;
    double vy = 0.0;
    double sigma = 2.0;
    double brightness = 1.0;
    std::array<double, 3> color{1.0, 1.0, 1.0};
};

struct SyntheticScene {
    std::vector<Blob> blobs;
    std::uint64_t texture_seed = 0;
    double background = 0.1;
    double texture_amplitude = 0.08;

    /// ContractError for an empty scene or a non-positive sigma.
    void validate() const;
};

struct SyntheticClip {
    Tensor<float> frames;    // (L, 3, H, W), values in [0, 1]
    Tensor<float> density;   // (L, H, W), each frame sums to 1
    FixationTable fixations;  // L lists of points
};

inline constexpr std::size_t kFixationsPerFrame = 20;

/// Centre of a blob at a frame, folded into [0, W-1] x [0, H-1].
std::array<double, 2> blob_center(const Blob& b, std::size_t frame, std::size_t height,
                                  std::size_t width);

/// One to three blobs with random start, velocity, size and tint.
SyntheticScene random_scene(std::uint64_t seed, std::size_t height, std::size_t width);

/// Renders the scene, its per-frame density and 20 fixations per frame
/// sampled from the density. Deterministic in (scene, sizes, seed).
SyntheticClip gen_synthetic_clip(const SyntheticScene& scene, std::size_t frames, std::size_t height,
                                 std::size_t width, std::uint64_t seed);

}  // namespace stsa
