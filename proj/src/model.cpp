#include "stsa/model.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

namespace stsa {

namespace {

std::string block_name(std::size_t b, std::size_t u, const char* part) {
    return "block" + std::to_string(b + 1) + ".unit" + std::to_string(u + 1) + "." + part;
}

Shape pooled_shape(const Shape& s, const Triple& k) {
    return {s[0], s[1], s[2] / k[0], s[3] / k[1], s[4] / k[2]};
}

}  // namespace

std::string to_string(Supervision s) { return s == Supervision::middle ? "middle" : "last"; }

std::string to_string(StsaVariant v) {
    switch (v) {
        case StsaVariant::full: return "full";
        case StsaVariant::no_temporal_relations: return "no_temporal";
        case StsaVariant::single_similarity: return "single_sim";
    }
    return "full";
}

std::string to_string(FusionMode m) { return m == FusionMode::addition ? "add" : "concat"; }

void ModelConfig::validate() const {
    if (height == 0 || width == 0 || height % 16 != 0 || width % 16 != 0) {
        throw ConfigError("height and width must be positive multiples of 16, got " +
                          std::to_string(height) + "x" + std::to_string(width));
    }
    if (micro) {
        if (t_in != 8) throw ConfigError("micro mode runs at t_in = 8, got " + std::to_string(t_in));
    } else if (t_in == 0 || t_in % 32 != 0) {
        throw ConfigError("t_in must be a positive multiple of 32 (or 8 in micro mode), got " +
                          std::to_string(t_in));
    }
    for (std::size_t b = 0; b < 4; ++b) {
        if (channels[b] == 0 || channels[b] % 4 != 0) {
            throw ConfigError("block " + std::to_string(b + 1) +
                              " channels must be a positive multiple of 4, got " +
                              std::to_string(channels[b]));
        }
        if (multiscale && b < 3 && (channels[b] / 2) % 4 != 0) {
            throw ConfigError("block " + std::to_string(b + 1) + " channels must be a multiple of 8 " +
                              "so the multi-scale block can split " + std::to_string(channels[b] / 2) +
                              " fused channels in four");
        }
    }
}

ModelConfig ModelConfig::micro_config() {
    ModelConfig c;
    c.t_in = 8;
    c.height = 16;
    c.width = 16;
    c.channels = {8, 8, 8, 8};
    c.micro = true;
    return c;
}

void TrainConfig::validate() const {
    if (batch == 0) throw ConfigError("batch must be at least 1");
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
}

ShapePlan derive_shape_plan(const ModelConfig& cfg) {
    cfg.validate();
    ShapePlan p;
    const auto& c = cfg.channels;
    p.input = {1, 3, cfg.t_in, cfg.height, cfg.width};
    const std::size_t h1 = cfg.height / 2, w1 = cfg.width / 2;
    const std::size_t t1 = cfg.micro ? cfg.t_in : cfg.t_in / 2;
    const std::size_t t3 = cfg.micro ? t1 / 2 : t1 / 4;
    p.encoder[0] = {1, c[0], t1, h1, w1};
    p.encoder[1] = {1, c[1], t1, h1 / 2, w1 / 2};
    p.encoder[2] = {1, c[2], t1 / 2, h1 / 4, w1 / 4};
    p.encoder[3] = {1, c[3], t3, h1 / 8, w1 / 8};
    for (std::size_t b = 0; b < 4; ++b) {
        const std::size_t t = p.encoder[b][2];
        if (t < 4 || t % 4 != 0) {
            throw ConfigError("branch " + std::to_string(b + 1) + " has " + std::to_string(t) +
                              " time steps, which cannot be compressed to 4");
        }
        p.compress_stride[b] = (b == 3 && t == 4) ? 0 : t / 4;
        p.compressed[b] = {1, c[b], 4, p.encoder[b][3], p.encoder[b][4]};
        p.attended[b] = {1, c[b] / 2, 4, p.encoder[b][3], p.encoder[b][4]};
    }
    for (std::size_t k = 0; k < 3; ++k) p.fused[k] = p.attended[k];
    p.output = {cfg.height, cfg.width};
    return p;
}

StsaNet::StsaNet(ModelConfig cfg) : cfg_(cfg), plan_(derive_shape_plan(cfg)) {
    const auto& c = cfg_.channels;
    stem_ = ConvLayer("stem", 3, ConvSpec{c[0], {1, 3, 3}, {1, 2, 2}, {0, 1, 1}, true});
    for (std::size_t b = 0; b < 4; ++b) {
        const std::size_t in = b == 0 ? c[0] : c[b - 1];
        const std::size_t ts = (b == 0 && !cfg_.micro) ? 2 : 1;
        for (std::size_t u = 0; u < 2; ++u) {
            blocks_[b][u].temporal =
                ConvLayer(block_name(b, u, "temporal"), u == 0 ? in : c[b],
                          ConvSpec{c[b], {3, 1, 1}, {u == 0 ? ts : 1, 1, 1}, {1, 0, 0}, true});
            blocks_[b][u].spatial = ConvLayer(block_name(b, u, "spatial"), c[b],
                                              ConvSpec{c[b], {1, 3, 3}, {1, 1, 1}, {0, 1, 1}, true});
        }
    }
    pools_ = {Triple{1, 2, 2}, Triple{2, 2, 2}, cfg_.micro ? Triple{1, 2, 2} : Triple{2, 2, 2}};
    for (std::size_t b = 0; b < 4; ++b) {
        const std::size_t s = plan_.compress_stride[b];
        if (s > 0) {
            compress_[b] = ConvLayer("compress" + std::to_string(b + 1), c[b],
                                     ConvSpec{c[b], {s, 1, 1}, {s, 1, 1}, {0, 0, 0}, true});
        }
        StsaConfig sc;
        sc.channels = c[b];
        sc.use_bottleneck = cfg_.bottleneck && b == 0;
        sc.variant = cfg_.variant;
        sc.attention_scaling = cfg_.attention_scaling;
        sc.use_layer1 = cfg_.stsa_layer1 && cfg_.stsa_branches[b];
        sc.use_layer2 = cfg_.stsa_layer2 && cfg_.stsa_branches[b];
        branches_[b] = StsaModule("branch" + std::to_string(b + 1), sc);
    }
    for (std::size_t k = 0; k < 3; ++k) {
        AmsfConfig ac;
        ac.deep_channels = c[k + 1] / 2;
        ac.channels = c[k] / 2;
        ac.attentional_weighting = cfg_.attentional_weighting;
        ac.multiscale = cfg_.multiscale;
        ac.fusion = cfg_.fusion;
        ac.relu_before_norm = cfg_.relu_before_norm;
        fusion_[k] = AmsfStage("fuse" + std::to_string(k + 1), ac);
    }
    const std::size_t ch = c[0] / 2;
    collapse_ = ConvLayer("head.collapse", ch, ConvSpec{ch, {4, 1, 1}, {1, 1, 1}, {0, 0, 0}, true});
    head_ = ConvLayer("head.out", ch, pointwise(1));

    // Cross-check the closed-form plan against the layer geometry.
    Shape s = conv3d_output_shape(plan_.input, stem_.spec);
    for (std::size_t b = 0; b < 4; ++b) {
        if (b > 0) s = pooled_shape(s, pools_[b - 1]);
        for (const auto& unit : blocks_[b]) {
            s = conv3d_output_shape(s, unit.temporal.spec);
            s = conv3d_output_shape(s, unit.spatial.spec);
        }
        if (s != plan_.encoder[b]) {
            throw ConfigError("block " + std::to_string(b + 1) + " produces " + to_string(s) +
                              ", expected " + to_string(plan_.encoder[b]));
        }
        if (plan_.compress_stride[b] > 0) {
            const Shape t = conv3d_output_shape(s, compress_[b].spec);
            if (t != plan_.compressed[b]) {
                throw ConfigError("compression of branch " + std::to_string(b + 1) + " produces " +
                                  to_string(t));
            }
        }
    }
}

template <typename T>
ParameterStore<T> StsaNet::make_parameters() const {
    ParameterStore<T> store;
    init(store);
    return store;
}

template <typename T>
void StsaNet::init(ParameterStore<T>& store) const {
    SplitMix64 rng(mix_seed(cfg_.seed, 0x1417));
    stem_.init(store, rng);
    for (const auto& block : blocks_) {
        for (const auto& unit : block) {
            unit.temporal.init(store, rng);
            unit.spatial.init(store, rng);
        }
    }
    for (std::size_t b = 0; b < 4; ++b) {
        if (plan_.compress_stride[b] > 0) compress_[b].init(store, rng);
        branches_[b].init(store, rng);
    }
    for (const auto& f : fusion_) f.init(store, rng);
    collapse_.init(store, rng);
    head_.init(store, rng);
}

template <typename T>
Var<T> StsaNet::input(Tape<T>& tape, const Tensor<T>& clip) const {
    const Shape want{cfg_.t_in, 3, cfg_.height, cfg_.width};
    if (clip.shape() != want) {
        throw DimensionError("input clip must be " + to_string(want) + ", got " + to_string(clip.shape()));
    }
    Tensor<T> x = permute_tensor(clip, {1, 0, 2, 3});
    return tape.constant(x.reshaped({1, 3, cfg_.t_in, cfg_.height, cfg_.width}));
}

template <typename T>
BranchFeatures<T> StsaNet::encode(Tape<T>& tape, ParameterStore<T>& store, const Var<T>& x) const {
    BranchFeatures<T> out;
    Var<T> h = relu(stem_(tape, store, x));
    for (std::size_t b = 0; b < 4; ++b) {
        if (b > 0) h = maxpool3d(h, pools_[b - 1], pools_[b - 1]).output;
        for (const auto& unit : blocks_[b]) h = unit(tape, store, h);
        out.maps[b] = h;
    }
    return out;
}

template <typename T>
std::array<Var<T>, 4> StsaNet::compress(Tape<T>& tape, ParameterStore<T>& store,
                                        const BranchFeatures<T>& f) const {
    std::array<Var<T>, 4> out;
    for (std::size_t b = 0; b < 4; ++b) {
        if (f.maps[b].shape() != plan_.encoder[b]) {
            throw ContractError("branch " + std::to_string(b + 1) + " expected " +
                                to_string(plan_.encoder[b]) + ", got " + to_string(f.maps[b].shape()));
        }
        out[b] = plan_.compress_stride[b] > 0 ? compress_[b](tape, store, f.maps[b]) : f.maps[b];
    }
    return out;
}

template <typename T>
std::array<Var<T>, 4> StsaNet::attend(Tape<T>& tape, ParameterStore<T>& store,
                                      const std::array<Var<T>, 4>& compressed) const {
    std::array<Var<T>, 4> out;
    for (std::size_t b = 0; b < 4; ++b) out[b] = branches_[b].forward(tape, store, compressed[b]);
    return out;
}

template <typename T>
Var<T> StsaNet::fuse(Tape<T>& tape, ParameterStore<T>& store,
                     const std::array<Var<T>, 4>& attended) const {
    Var<T> deep = attended[3];
    for (std::size_t k = 3; k-- > 0;) deep = fusion_[k].forward(tape, store, deep, attended[k]);
    return deep;
}

template <typename T>
Var<T> StsaNet::readout(Tape<T>& tape, ParameterStore<T>& store, const Var<T>& fused) const {
    Var<T> h = upsample_trilinear(fused, Triple{4, cfg_.height, cfg_.width});
    h = relu(collapse_(tape, store, h));
    h = sigmoid(head_(tape, store, h));
    return reshape(h, {cfg_.height, cfg_.width});
}

template <typename T>
Var<T> StsaNet::forward(Tape<T>& tape, ParameterStore<T>& store, const Tensor<T>& clip,
                        ForwardTrace<T>* trace) const {
    Var<T> x = input(tape, clip);
    BranchFeatures<T> enc = encode(tape, store, x);
    auto comp = compress(tape, store, enc);
    auto att = attend(tape, store, comp);
    Var<T> fused = fuse(tape, store, att);
    Var<T> s = readout(tape, store, fused);
    if (trace) *trace = ForwardTrace<T>{enc, comp, att, fused, s};
    return divide(s, reshape(sum(s), {1, 1}));
}

template <typename T>
Tensor<T> StsaNet::predict(ParameterStore<T>& store, const Tensor<T>& clip) const {
    Tape<T> tape(false);
    return forward(tape, store, clip).value();
}

std::vector<std::size_t> window_frames(std::size_t length, std::size_t i, std::size_t t_in,
                                       Supervision supervision) {
    if (length == 0 || i >= length) {
        throw ContractError("frame " + std::to_string(i) + " outside a video of " +
                            std::to_string(length) + " frames");
    }
    const std::ptrdiff_t lead = supervision == Supervision::middle
                                    ? static_cast<std::ptrdiff_t>(t_in / 2) - 1
                                    : static_cast<std::ptrdiff_t>(t_in) - 1;
    const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(i) - lead;
    std::vector<std::size_t> src(t_in);
    for (std::size_t j = 0; j < t_in; ++j) {
        const std::ptrdiff_t f = std::clamp<std::ptrdiff_t>(start + static_cast<std::ptrdiff_t>(j), 0,
                                                            static_cast<std::ptrdiff_t>(length) - 1);
        src[j] = static_cast<std::size_t>(f);
    }
    return src;
}

template <typename T>
Tensor<T> pad_clip_for_frame(const Tensor<T>& video, std::size_t i, std::size_t t_in,
                             Supervision supervision) {
    if (video.rank() != 4) {
        throw DimensionError("video must be (L, C, H, W), got " + to_string(video.shape()));
    }
    const Shape& s = video.shape();
    const std::size_t frame = s[1] * s[2] * s[3];
    Tensor<T> clip(Shape{t_in, s[1], s[2], s[3]});
    const auto src = window_frames(s[0], i, t_in, supervision);
    for (std::size_t j = 0; j < t_in; ++j) {
        std::copy_n(video.raw() + src[j] * frame, frame, clip.raw() + j * frame);
    }
    return clip;
}

template <typename T>
std::vector<Tensor<T>> sliding_window_predict(const StsaNet& net, ParameterStore<T>& store,
                                              const Tensor<T>& video, std::size_t threads) {
    if (video.rank() != 4) {
        throw DimensionError("video must be (L, 3, H, W), got " + to_string(video.shape()));
    }
    const std::size_t length = video.shape()[0];
    const auto& cfg = net.config();
    std::vector<Tensor<T>> maps(length);
    auto run = [&](std::size_t i) {
        maps[i] = net.predict(store, pad_clip_for_frame(video, i, cfg.t_in, cfg.supervision));
    };
    threads = std::clamp<std::size_t>(threads, 1, length);
    if (threads == 1) {
        for (std::size_t i = 0; i < length; ++i) run(i);
        return maps;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i; (i = next.fetch_add(1)) < length;) run(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return maps;
}

#define STSA_INSTANTIATE(T)                                                                          \
    template ParameterStore<T> StsaNet::make_parameters<T>() const;                                 \
    template void StsaNet::init<T>(ParameterStore<T>&) const;                                       \
    template Var<T> StsaNet::input<T>(Tape<T>&, const Tensor<T>&) const;                            \
    template BranchFeatures<T> StsaNet::encode<T>(Tape<T>&, ParameterStore<T>&, const Var<T>&) const; \
    template std::array<Var<T>, 4> StsaNet::compress<T>(Tape<T>&, ParameterStore<T>&,              \
                                                        const BranchFeatures<T>&) const;           \
    template std::array<Var<T>, 4> StsaNet::attend<T>(Tape<T>&, ParameterStore<T>&,                \
                                                      const std::array<Var<T>, 4>&) const;         \
    template Var<T> StsaNet::fuse<T>(Tape<T>&, ParameterStore<T>&, const std::array<Var<T>, 4>&)   \
        const;                                                                                     \
    template Var<T> StsaNet::readout<T>(Tape<T>&, ParameterStore<T>&, const Var<T>&) const;         \
    template Var<T> StsaNet::forward<T>(Tape<T>&, ParameterStore<T>&, const Tensor<T>&,             \
                                        ForwardTrace<T>*) const;                                   \
    template Tensor<T> StsaNet::predict<T>(ParameterStore<T>&, const Tensor<T>&) const;             \
    template Tensor<T> pad_clip_for_frame<T>(const Tensor<T>&, std::size_t, std::size_t,           \
                                             Supervision);                                         \
    template std::vector<Tensor<T>> sliding_window_predict<T>(const StsaNet&, ParameterStore<T>&,  \
                                                              const Tensor<T>&, std::size_t);

STSA_INSTANTIATE(float)
STSA_INSTANTIATE(double)

}  // namespace stsa
