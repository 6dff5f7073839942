#pragma once

#include <cstddef>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "stsa/training.hpp"

namespace stsa {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumerical = 3 };

/// Names accepted by `ablate --variant`.
std::vector<std::string> ablation_names();

/// Applies a named ablation to the model config. ConfigError for unknown names.
void apply_ablation(ModelConfig& cfg, std::string_view name);

/// Predicted maps for one clip: <dir>/saliency.stsa (L,H,W) plus frame_XXXX.pgm.
inline constexpr const char* kSaliencyFile = "saliency.stsa";

/// Runs the checkpoint over every clip under `video` (a clip directory or a
/// directory of clips). A single clip writes straight into `out`, otherwise
/// into out/<clip name>.
void run_inference(const fs::path& checkpoint, const fs::path& video, const fs::path& out,
                   std::size_t threads);

struct EvalRow {
    std::string clip;
    std::size_t frame = 0;
    FrameScores scores;
};

/// Scores every frame of every ground-truth clip against the matching
/// predictions laid out as run_inference writes them.
std::vector<EvalRow> evaluate_predictions(const fs::path& pred, const fs::path& gt);

/// Per-clip means and an overall mean row, columns aligned.
std::string format_eval_table(const std::vector<EvalRow>& rows);
/// clip,frame,CC,NSS,SIM,KL,AUC,sAUC with one line per frame.
std::string format_eval_csv(const std::vector<EvalRow>& rows);

/// Worker count from STSA_THREADS, default 1.
std::size_t threads_from_env();

/// Entry point of the command-line tool. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace stsa
