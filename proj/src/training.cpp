#include "stsa/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

namespace stsa {

namespace {

constexpr std::string_view kCheckpointMagic = "STSACKPT";
constexpr std::uint32_t kCheckpointVersion = 1;

std::string clip_dir_name(std::size_t k) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "clip_%03zu", k);
    return buf;
}

// The model part of a config, which must match when resuming.
std::string model_signature(const RunConfig& cfg) {
    RunConfig c;
    c.model = cfg.model;
    return format_config(c);
}

}  // namespace

void save_clip(const fs::path& dir, const SyntheticClip& clip) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    write_tensor(dir / kFramesFile, clip.frames);
    write_tensor(dir / kDensityFile, clip.density);
    write_fixations(dir / kFixationsFile, clip.fixations);
}

ClipRecord load_clip(const fs::path& dir) {
    ClipRecord r;
    r.name = dir.filename().string();
    if (r.name.empty()) r.name = dir.parent_path().filename().string();
    r.frames = read_tensor<float>(dir / kFramesFile);
    if (r.frames.rank() != 4 || r.frames.shape()[1] != 3) {
        throw FormatError(dir.string() + ": frames must be (L,3,H,W), got " + to_string(r.frames.shape()), 0);
    }
    const std::size_t l = r.length(), h = r.height(), w = r.width();
    if (fs::exists(dir / kDensityFile)) {
        r.density = read_tensor<float>(dir / kDensityFile);
        if (r.density.shape() != Shape{l, h, w}) {
            throw FormatError(dir.string() + ": density must be " + to_string(Shape{l, h, w}) + ", got " +
                                  to_string(r.density.shape()),
                              0);
        }
    } else {
        r.density = Tensor<float>(Shape{l, h, w});
    }
    r.fixations = fs::exists(dir / kFixationsFile) ? read_fixations(dir / kFixationsFile, l, h, w)
                                                   : FixationTable(l);
    return r;
}

Dataset load_dataset(const fs::path& root) {
    if (!fs::is_directory(root)) throw IoError("not a directory: " + root.string());
    Dataset d;
    if (fs::exists(root / kFramesFile)) {
        d.clips.push_back(load_clip(root));
        return d;
    }
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(root)) {
        if (e.is_directory() && fs::exists(e.path() / kFramesFile)) dirs.push_back(e.path());
    }
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw IoError("no clips (directories with " + std::string(kFramesFile) + ") under " + root.string());
    for (const auto& p : dirs) d.clips.push_back(load_clip(p));
    return d;
}

SyntheticClip synthetic_clip_for(std::uint64_t seed, std::size_t k, std::size_t frames,
                                 std::size_t height, std::size_t width) {
    const SyntheticScene scene = random_scene(mix_seed(seed, 2 * k), height, width);
    return gen_synthetic_clip(scene, frames, height, width, mix_seed(seed, 2 * k + 1));
}

Dataset make_synthetic_dataset(std::uint64_t seed, std::size_t first, std::size_t count,
                               std::size_t frames, std::size_t height, std::size_t width) {
    Dataset d;
    for (std::size_t k = first; k < first + count; ++k) {
        SyntheticClip c = synthetic_clip_for(seed, k, frames, height, width);
        d.clips.push_back(ClipRecord{clip_dir_name(k), std::move(c.frames), std::move(c.density),
                                     std::move(c.fixations)});
    }
    return d;
}

void write_synthetic_dataset(const fs::path& root, std::uint64_t seed, std::size_t count,
                             std::size_t frames, std::size_t height, std::size_t width) {
    for (std::size_t k = 0; k < count; ++k) {
        save_clip(root / clip_dir_name(k), synthetic_clip_for(seed, k, frames, height, width));
    }
}

TrainingSample<float> make_sample(const ClipRecord& clip, std::size_t frame, const ModelConfig& cfg) {
    if (clip.height() != cfg.height || clip.width() != cfg.width) {
        throw ConfigError("clip " + clip.name + " is " + std::to_string(clip.height()) + "x" +
                          std::to_string(clip.width()) + ", model expects " + std::to_string(cfg.height) +
                          "x" + std::to_string(cfg.width));
    }
    TrainingSample<float> s;
    s.clip = pad_clip_for_frame(clip.frames, frame, cfg.t_in, cfg.supervision);
    s.target = slice_tensor(clip.density, 0, frame, 1).reshaped({cfg.height, cfg.width});
    return s;
}

std::vector<TrainingSample<float>> sample_batch(const Dataset& data, const ModelConfig& cfg,
                                                std::size_t batch, std::size_t step) {
    if (data.clips.empty()) throw ContractError("cannot sample from an empty dataset");
    SplitMix64 rng(mix_seed(mix_seed(cfg.seed, 0xBA7C), step));
    std::vector<TrainingSample<float>> out;
    for (std::size_t b = 0; b < batch; ++b) {
        const auto& clip = data.clips[rng.below(data.clips.size())];
        out.push_back(make_sample(clip, rng.below(clip.length()), cfg));
    }
    return out;
}

template <typename T>
double train_step(const StsaNet& net, ParameterStore<T>& store,
                  const std::vector<TrainingSample<T>>& batch, const AdamConfig& adam,
                  const LossConfig& loss_cfg) {
    if (batch.empty()) throw ContractError("train_step needs at least one sample");
    const T inv = static_cast<T>(1.0 / static_cast<double>(batch.size()));
    double total = 0.0;
    for (const auto& sample : batch) {
        Tape<T> tape;
        Var<T> s = net.forward(tape, store, sample.clip);
        Var<T> loss = loss_total(s, sample.target, loss_cfg);
        total += loss.value()[0];
        tape.backward(scale(loss, inv));
    }
    const double mean = total / static_cast<double>(batch.size());
    if (!std::isfinite(mean)) throw NumericalError("non-finite training loss");
    adam_step(store, adam);
    return mean;
}

template <typename T>
double evaluate_loss(const StsaNet& net, ParameterStore<T>& store,
                     const std::vector<TrainingSample<T>>& samples, const LossConfig& loss_cfg) {
    if (samples.empty()) throw ContractError("evaluate_loss needs at least one sample");
    double total = 0.0;
    for (const auto& sample : samples) {
        Tape<T> tape(false);
        Var<T> s = net.forward(tape, store, sample.clip);
        total += loss_total(s, sample.target, loss_cfg).value()[0];
    }
    return total / static_cast<double>(samples.size());
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    ByteWriter w;
    for (char c : kCheckpointMagic) w.u8(static_cast<std::uint8_t>(c));
    w.u32(kCheckpointVersion);
    w.str(format_config(ckpt.config));
    w.u64(ckpt.state.step);
    const auto& s = ckpt.state.schedule;
    w.f64(s.lr);
    w.f64(s.smoothed);
    w.f64(s.reference);
    w.u64(s.steps_in_window);
    w.u64(s.decays);
    w.u64(s.observed);
    w.u32(static_cast<std::uint32_t>(ckpt.params.size()));
    for (const auto& [name, p] : ckpt.params.entries()) {
        w.str(name);
        w.u64(p.step);
        encode_tensor(w, p.value);
        encode_tensor(w, p.adam_m);
        encode_tensor(w, p.adam_v);
    }
    return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    auto magic = r.take(kCheckpointMagic.size(), "magic");
    if (std::string(magic.begin(), magic.end()) != kCheckpointMagic) {
        throw FormatError("not a checkpoint (bad magic)", 0);
    }
    const std::size_t version_at = r.offset();
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version), version_at);
    }
    Checkpoint c;
    const std::size_t config_at = r.offset();
    try {
        c.config = parse_config(r.str());
    } catch (const ParseError& e) {
        throw FormatError("embedded config: " + std::string(e.what()), config_at);
    }
    c.state.step = r.u64();
    auto& s = c.state.schedule;
    s.lr = r.f64();
    s.smoothed = r.f64();
    s.reference = r.f64();
    s.steps_in_window = r.u64();
    s.decays = r.u64();
    s.observed = r.u64();
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t entry_at = r.offset();
        const std::string name = r.str();
        const std::uint64_t step = r.u64();
        Tensor<float> value = decode_tensor<float>(r);
        Tensor<float> m = decode_tensor<float>(r);
        Tensor<float> v = decode_tensor<float>(r);
        if (m.shape() != value.shape() || v.shape() != value.shape()) {
            throw FormatError("optimizer state shape mismatch for " + name, entry_at);
        }
        if (c.params.contains(name)) throw FormatError("duplicate entry " + name, entry_at);
        auto& p = c.params.add(name, std::move(value));
        p.step = step;
        p.adam_m = std::move(m);
        p.adam_v = std::move(v);
    }
    r.expect_end();
    return c;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
    write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const fs::path& path) {
    const auto bytes = read_file(path);
    try {
        return decode_checkpoint(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.detail(), e.offset());
    }
}

Checkpoint train_loop(const Dataset& data, const RunConfig& cfg, const TrainOptions& options) {
    cfg.train.validate();
    const StsaNet net(cfg.model);
    Checkpoint ckpt;
    ckpt.config = cfg;
    PlateauSchedule schedule(cfg.train.lr);
    if (options.resume) {
        if (model_signature(options.resume->config) != model_signature(cfg)) {
            throw ConfigError("checkpoint was trained with a different model configuration");
        }
        ckpt.params = options.resume->params;
        ckpt.state = options.resume->state;
        schedule.restore(ckpt.state.schedule);
        // the expected parameter set must match exactly
        const auto fresh = net.make_parameters<float>();
        if (fresh.size() != ckpt.params.size()) {
            throw FormatError("checkpoint holds " + std::to_string(ckpt.params.size()) +
                                  " entries, model needs " + std::to_string(fresh.size()),
                              0);
        }
        for (const auto& [name, p] : fresh.entries()) {
            if (!ckpt.params.contains(name) || ckpt.params.value(name).shape() != p.value.shape()) {
                throw FormatError("checkpoint entry " + name + " missing or mis-shaped", 0);
            }
        }
    } else {
        ckpt.params = net.make_parameters<float>();
    }

    for (std::size_t step = ckpt.state.step; step < cfg.train.steps; ++step) {
        AdamConfig adam;
        adam.lr = schedule.lr();
        const auto batch = sample_batch(data, cfg.model, cfg.train.batch, step);
        const double loss = train_step(net, ckpt.params, batch, adam);
        if (cfg.train.lr_decay) schedule.observe(loss);
        if (options.log) {
            char line[96];
            std::snprintf(line, sizeof line, "step %zu loss %.6f lr %.3g\n", step + 1, loss, adam.lr);
            *options.log << line << std::flush;
        }
        ckpt.state.step = step + 1;
    }
    ckpt.state.schedule = schedule.state();
    if (options.checkpoint_path) save_checkpoint(*options.checkpoint_path, ckpt);
    return ckpt;
}

std::vector<TrainingSample<float>> evaluation_samples(const Dataset& data, const ModelConfig& cfg,
                                                      std::size_t stride) {
    if (stride == 0) throw ContractError("evaluation_samples: stride must be positive");
    std::vector<TrainingSample<float>> out;
    for (const auto& clip : data.clips) {
        for (std::size_t f = 0; f < clip.length(); f += stride) out.push_back(make_sample(clip, f, cfg));
    }
    return out;
}

FrameScores score_frame(const Tensor<double>& prediction, const Tensor<double>& density,
                        const std::vector<FixationPoint>& fixations,
                        const std::vector<FixationPoint>& shuffle) {
    FrameScores s;
    s.cc = metric_cc(prediction, density);
    s.nss = metric_nss(prediction, fixations);
    s.sim = metric_sim(prediction, density);
    s.kl = metric_kl(prediction, density);
    s.auc = metric_auc_judd(prediction, fixations);
    s.sauc = shuffle.empty() ? std::nan("") : metric_sauc(prediction, fixations, shuffle);
    return s;
}

std::vector<FixationPoint> shuffle_negatives(const Dataset& data, std::size_t clip, std::size_t frame) {
    std::set<FixationPoint> out;
    const bool single = data.clips.size() == 1;
    for (std::size_t c = 0; c < data.clips.size(); ++c) {
        if (c == clip && !single) continue;
        const auto& table = data.clips[c].fixations;
        for (std::size_t f = 0; f < table.size(); ++f) {
            if (single && f == frame) continue;
            out.insert(table[f].begin(), table[f].end());
        }
    }
    return {out.begin(), out.end()};
}

#define STSA_INSTANTIATE(T)                                                                      \
    template double train_step<T>(const StsaNet&, ParameterStore<T>&,                           \
                                  const std::vector<TrainingSample<T>>&, const AdamConfig&,     \
                                  const LossConfig&);                                           \
    template double evaluate_loss<T>(const StsaNet&, ParameterStore<T>&,                        \
                                     const std::vector<TrainingSample<T>>&, const LossConfig&);

STSA_INSTANTIATE(float)
STSA_INSTANTIATE(double)

}  // namespace stsa
