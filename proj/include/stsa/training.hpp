#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "stsa/data_io.hpp"
#include "stsa/model.hpp"
#include "stsa/optim.hpp"
#include "stsa/saliency.hpp"
#include "stsa/synthetic.hpp"

namespace stsa {

/// One clip on disk: <dir>/frames.stsa (L,3,H,W), <dir>/density.stsa (L,H,W),
/// <dir>/fixations.txt.
struct ClipRecord {
    std::string name;
    Tensor<float> frames;
    Tensor<float> density;
    FixationTable fixations;

    std::size_t length() const { return frames.shape()[0]; }
    std::size_t height() const { return frames.shape()[2]; }
    std::size_t width() const { return frames.shape()[3]; }
};

struct Dataset {
    std::vector<ClipRecord> clips;
};

inline constexpr const char* kFramesFile = "frames.stsa";
inline constexpr const char* kDensityFile = "density.stsa";
inline constexpr const char* kFixationsFile = "fixations.txt";

void save_clip(const fs::path& dir, const SyntheticClip& clip);
ClipRecord load_clip(const fs::path& dir);

/// A clip directory, or a directory of clip directories (sorted by name).
Dataset load_dataset(const fs::path& root);

/// Clip k of a synthetic dataset with the given seed. Clips are independent,
/// so held-out sets use indices past the training range.
SyntheticClip synthetic_clip_for(std::uint64_t seed, std::size_t k, std::size_t frames,
                                 std::size_t height, std::size_t width);
Dataset make_synthetic_dataset(std::uint64_t seed, std::size_t first, std::size_t count,
                               std::size_t frames, std::size_t height, std::size_t width);

/// Writes clip_000 .. clip_{n-1} under root.
void write_synthetic_dataset(const fs::path& root, std::uint64_t seed, std::size_t count,
                             std::size_t frames, std::size_t height, std::size_t width);

template <typename T>
struct TrainingSample {
    Tensor<T> clip;    // (T_in, 3, H, W)
    Tensor<T> target;  // (H, W), sums to 1
};

/// The batch for a step depends only on (seed, step).
std::vector<TrainingSample<float>> sample_batch(const Dataset& data, const ModelConfig& cfg,
                                                std::size_t batch, std::size_t step);

TrainingSample<float> make_sample(const ClipRecord& clip, std::size_t frame, const ModelConfig& cfg);

/// Frames 0, stride, 2*stride, ... of every clip, in clip order.
std::vector<TrainingSample<float>> evaluation_samples(const Dataset& data, const ModelConfig& cfg,
                                                      std::size_t stride = 4);

/// Mean over the batch of KL - CC; gradients of loss / B accumulate per
/// sample in index order, then one Adam step.
template <typename T>
double train_step(const StsaNet& net, ParameterStore<T>& store,
                  const std::vector<TrainingSample<T>>& batch, const AdamConfig& adam,
                  const LossConfig& loss = {});

/// Mean loss over samples without updating anything.
template <typename T>
double evaluate_loss(const StsaNet& net, ParameterStore<T>& store,
                     const std::vector<TrainingSample<T>>& samples, const LossConfig& loss = {});

struct TrainState {
    std::size_t step = 0;
    PlateauSchedule::State schedule;
};

struct Checkpoint {
    RunConfig config;
    TrainState state;
    ParameterStore<float> params;
};

/// Container: "STSACKPT", u32 version, config text, step, scheduler state,
/// then per entry (sorted by name) its name, Adam step and value/m/v tensors.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const fs::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const fs::path& path);

struct TrainOptions {
    std::ostream* log = nullptr;                // one line per step
    std::optional<fs::path> checkpoint_path;    // written when the loop ends
    const Checkpoint* resume = nullptr;         // continue from this state
};

/// Runs steps until cfg.train.steps, applying the plateau rule when enabled.
/// Throws NumericalError on a non-finite loss.
Checkpoint train_loop(const Dataset& data, const RunConfig& cfg, const TrainOptions& options = {});

/// Per-frame metric row.
struct FrameScores {
    double cc = 0.0, nss = 0.0, sim = 0.0, kl = 0.0, auc = 0.0, sauc = 0.0;
};

FrameScores score_frame(const Tensor<double>& prediction, const Tensor<double>& density,
                        const std::vector<FixationPoint>& fixations,
                        const std::vector<FixationPoint>& shuffle_negatives);

/// Union of fixations of every other clip; with a single clip, the other
/// frames of the same clip.
std::vector<FixationPoint> shuffle_negatives(const Dataset& data, std::size_t clip,
                                             std::size_t frame);

}  // namespace stsa
