#include "stsa/self_attention.hpp"

#include <cmath>

namespace stsa {

namespace {

ConvSpec spatial_conv(std::size_t out, Triple kernel, Triple padding) {
    return ConvSpec{out, kernel, {1, 1, 1}, padding, true};
}

void require_rank5(const Shape& s, const char* where) {
    if (s.size() != 5) {
        throw DimensionError(std::string(where) + " expects an (N,C,T,H,W) map, got " + to_string(s));
    }
}

}  // namespace

void StsaConfig::validate() const {
    if (channels < 2 || channels % 2 != 0) {
        throw ConfigError("attention width must be even, got " + std::to_string(channels));
    }
    if (use_layer2 && (channels / 2) % 2 != 0) {
        throw ConfigError("second attention layer runs at width " + std::to_string(channels / 2) +
                          ", which must be even");
    }
}

AttentionPattern layer1_pattern(StsaVariant v) {
    switch (v) {
        case StsaVariant::full: return AttentionPattern::pairwise_frames;
        case StsaVariant::no_temporal_relations: return AttentionPattern::per_frame;
        case StsaVariant::single_similarity: return AttentionPattern::whole_clip;
    }
    return AttentionPattern::pairwise_frames;
}

AttentionPattern layer2_pattern(StsaVariant v) {
    switch (v) {
        case StsaVariant::full: return AttentionPattern::pairwise_halves;
        case StsaVariant::no_temporal_relations: return AttentionPattern::per_frame;
        case StsaVariant::single_similarity: return AttentionPattern::whole_clip;
    }
    return AttentionPattern::pairwise_halves;
}

template <typename T>
std::vector<Var<T>> temporal_split(const Var<T>& x, const std::vector<std::size_t>& lengths) {
    require_rank5(x.shape(), "temporal_split");
    std::size_t total = 0;
    for (auto l : lengths) total += l;
    if (total != x.shape()[2]) {
        throw ContractError("temporal_split: part lengths cover " + std::to_string(total) +
                            " steps of " + std::to_string(x.shape()[2]));
    }
    std::vector<Var<T>> parts;
    std::size_t start = 0;
    for (auto l : lengths) {
        parts.push_back(slice(x, 2, start, l));
        start += l;
    }
    return parts;
}

QkvProjection::QkvProjection(std::string p, std::size_t c) : prefix(std::move(p)), channels(c) {
    if (c < 2 || c % 2 != 0) {
        throw ConfigError("query/key embedding needs an even channel count, got " + std::to_string(c));
    }
    const std::size_t half = c / 2;
    query_reduce = ConvLayer(prefix + ".query.reduce", c, pointwise(half));
    query_spatial = ConvLayer(prefix + ".query.spatial", half, spatial_conv(half, {1, 3, 3}, {0, 1, 1}));
    key_reduce = ConvLayer(prefix + ".key.reduce", c, pointwise(half));
    key_spatial = ConvLayer(prefix + ".key.spatial", half, spatial_conv(half, {1, 3, 3}, {0, 1, 1}));
    value_vertical = ConvLayer(prefix + ".value.vertical", c, spatial_conv(c, {1, 3, 1}, {0, 1, 0}));
    value_horizontal =
        ConvLayer(prefix + ".value.horizontal", c, spatial_conv(c, {1, 1, 3}, {0, 0, 1}));
}

template <typename T>
void QkvProjection::init(ParameterStore<T>& store, SplitMix64& rng) const {
    for (const ConvLayer* l :
         {&query_reduce, &query_spatial, &key_reduce, &key_spatial, &value_vertical, &value_horizontal}) {
        l->init(store, rng);
    }
}

template <typename T>
std::array<Var<T>, 3> QkvProjection::embed_map(Tape<T>& tape, ParameterStore<T>& store,
                                               const Var<T>& x) const {
    require_rank5(x.shape(), "embed_qkv");
    if (x.shape()[1] != channels) {
        throw DimensionError("embed_qkv: expected " + std::to_string(channels) + " channels, got " +
                             std::to_string(x.shape()[1]));
    }
    Var<T> q = query_spatial(tape, store, query_reduce(tape, store, x));
    Var<T> k = key_spatial(tape, store, key_reduce(tape, store, x));
    Var<T> v = value_horizontal(tape, store, value_vertical(tape, store, x));
    return {q, k, v};
}

template <typename T>
static QkvEmbedding<T> flatten_part(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                                    std::size_t part_id) {
    const Shape& s = v.shape();
    const std::size_t grid = s[2] * s[3] * s[4];
    return QkvEmbedding<T>{reshape(q, {q.shape()[1], grid}), reshape(k, {k.shape()[1], grid}),
                           reshape(v, {s[1], grid}), part_id};
}

template <typename T>
QkvEmbedding<T> QkvProjection::embed(Tape<T>& tape, ParameterStore<T>& store, const Var<T>& part,
                                     std::size_t part_id) const {
    if (part.shape().size() == 5 && part.shape()[0] != 1) {
        throw DimensionError("embed_qkv: expects a single sample, got batch " +
                             std::to_string(part.shape()[0]));
    }
    auto [q, k, v] = embed_map(tape, store, part);
    return flatten_part(q, k, v, part_id);
}

template <typename T>
Var<T> dot_product_attention(const QkvEmbedding<T>& q_from, const QkvEmbedding<T>& kv_from,
                             bool scaling, std::vector<Tensor<T>>* similarities) {
    const Shape& qs = q_from.query.shape();
    const Shape& ks = kv_from.key.shape();
    const Shape& vs = kv_from.value.shape();
    if (qs.size() != 2 || ks.size() != 2 || vs.size() != 2 || qs[0] != ks[0] || vs[1] != ks[1]) {
        throw DimensionError("dot_product_attention: incompatible embeddings q " + to_string(qs) +
                             ", k " + to_string(ks) + ", v " + to_string(vs));
    }
    Var<T> sim = matmul(transpose(q_from.query), kv_from.key);  // (Pq, Pk)
    if (scaling) sim = scale(sim, static_cast<T>(1.0 / std::sqrt(static_cast<double>(qs[0]))));
    Var<T> s = softmax_lastdim(sim);
    if (similarities) similarities->push_back(s.value());
    // (S v^T)^T == v S^T
    return matmul(kv_from.value, transpose(s));
}

StsaLayer::StsaLayer(std::string prefix, std::size_t channels, AttentionPattern pattern,
                     bool bottleneck, bool scaling)
    : prefix_(std::move(prefix)),
      channels_(channels),
      pattern_(pattern),
      bottleneck_(bottleneck),
      scaling_(scaling),
      qkv_(prefix_, channels),
      norm_{prefix_ + ".norm", channels} {}

std::vector<std::size_t> StsaLayer::part_lengths() const {
    switch (pattern_) {
        case AttentionPattern::pairwise_halves: return {2, 2};
        case AttentionPattern::whole_clip: return {4};
        default: return {1, 1, 1, 1};
    }
}

std::vector<std::pair<std::size_t, std::size_t>> StsaLayer::slots() const {
    switch (pattern_) {
        case AttentionPattern::pairwise_frames: return {{1, 0}, {0, 1}, {3, 2}, {2, 3}};
        case AttentionPattern::pairwise_halves: return {{1, 0}, {0, 1}};
        case AttentionPattern::per_frame: return {{0, 0}, {1, 1}, {2, 2}, {3, 3}};
        case AttentionPattern::whole_clip: return {{0, 0}};
    }
    return {};
}

template <typename T>
void StsaLayer::init(ParameterStore<T>& store, SplitMix64& rng) const {
    qkv_.init(store, rng);
    norm_.init(store);
}

template <typename T>
Var<T> StsaLayer::attend(Tape<T>& tape, ParameterStore<T>& store, const Var<T>& x,
                         std::vector<Tensor<T>>* similarities) const {
    const Shape& s = x.shape();
    const auto lengths = part_lengths();
    std::vector<Var<T>> samples;
    for (std::size_t n = 0; n < s[0]; ++n) {
        Var<T> xn = s[0] == 1 ? x : slice(x, 0, n, 1);
        auto [q, k, v] = qkv_.embed_map(tape, store, xn);
        auto qp = temporal_split(q, lengths);
        auto kp = temporal_split(k, lengths);
        auto vp = temporal_split(v, lengths);
        std::vector<QkvEmbedding<T>> emb;
        for (std::size_t p = 0; p < lengths.size(); ++p) {
            emb.push_back(lengths.size() == 1 ? flatten_part(q, k, v, 0)
                                              : flatten_part(qp[p], kp[p], vp[p], p));
        }
        std::vector<Var<T>> outs;
        for (auto [qi, kvi] : slots()) {
            Var<T> o = dot_product_attention(emb[qi], emb[kvi], scaling_, similarities);
            outs.push_back(reshape(o, {1, channels_, lengths[qi], s[3], s[4]}));
        }
        samples.push_back(outs.size() == 1 ? outs[0] : concat(outs, 2));
    }
    return samples.size() == 1 ? samples[0] : concat(samples, 0);
}

template <typename T>
Var<T> StsaLayer::forward(Tape<T>& tape, ParameterStore<T>& store, const Var<T>& x,
                          AttentionProbe<T>* probe) const {
    const Shape& s = x.shape();
    require_rank5(s, "attention layer");
    if (s[2] != 4) {
        throw ContractError("attention layer expects 4 time steps, got " + std::to_string(s[2]));
    }
    if (s[1] != channels_) {
        throw DimensionError("attention layer expects " + std::to_string(channels_) +
                             " channels, got " + std::to_string(s[1]));
    }
    std::vector<Tensor<T>>* sims = probe ? &probe->similarities : nullptr;
    Var<T> attended;
    if (bottleneck_) {
        if (s[3] % 2 != 0 || s[4] % 2 != 0) {
            throw ConfigError("spatial bottleneck needs even height and width, got " +
                              std::to_string(s[3]) + "x" + std::to_string(s[4]));
        }
        PoolResult<T> pooled = maxpool3d(x, Triple{1, 2, 2}, Triple{1, 2, 2});
        Var<T> small = attend(tape, store, pooled.output, sims);
        attended = maxunpool3d(small, pooled.indices, s);
    } else {
        attended = attend(tape, store, x, sims);
    }
    if (probe) probe->attended = attended;
    return add(x, norm_(tape, store, attended));
}

StsaModule::StsaModule(std::string prefix, const StsaConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t c = cfg_.channels;
    if (cfg_.use_layer1) {
        layer1_ = StsaLayer(prefix + ".layer1", c, layer1_pattern(cfg_.variant), cfg_.use_bottleneck,
                            cfg_.attention_scaling);
    }
    middle_ = ConvLayer(prefix + ".middle", c, pointwise(c / 2));
    if (cfg_.use_layer2) {
        layer2_ = StsaLayer(prefix + ".layer2", c / 2, layer2_pattern(cfg_.variant),
                            cfg_.use_bottleneck, cfg_.attention_scaling);
    }
}

template <typename T>
void StsaModule::init(ParameterStore<T>& store, SplitMix64& rng) const {
    if (cfg_.use_layer1) layer1_.init(store, rng);
    middle_.init(store, rng);
    if (cfg_.use_layer2) layer2_.init(store, rng);
}

template <typename T>
Var<T> StsaModule::forward(Tape<T>& tape, ParameterStore<T>& store, const Var<T>& x,
                           std::vector<AttentionProbe<T>>* probes) const {
    Var<T> h = x;
    if (cfg_.use_layer1) {
        AttentionProbe<T>* p = nullptr;
        if (probes) p = &probes->emplace_back();
        h = layer1_.forward(tape, store, h, p);
    }
    h = middle_(tape, store, h);
    if (cfg_.use_layer2) {
        AttentionProbe<T>* p = nullptr;
        if (probes) p = &probes->emplace_back();
        h = layer2_.forward(tape, store, h, p);
    }
    return h;
}

#define STSA_INSTANTIATE(T)                                                                          \
    template std::vector<Var<T>> temporal_split<T>(const Var<T>&, const std::vector<std::size_t>&); \
    template void QkvProjection::init<T>(ParameterStore<T>&, SplitMix64&) const;                   \
    template std::array<Var<T>, 3> QkvProjection::embed_map<T>(Tape<T>&, ParameterStore<T>&,        \
                                                               const Var<T>&) const;               \
    template QkvEmbedding<T> QkvProjection::embed<T>(Tape<T>&, ParameterStore<T>&, const Var<T>&,  \
                                                     std::size_t) const;                           \
    template Var<T> dot_product_attention<T>(const QkvEmbedding<T>&, const QkvEmbedding<T>&, bool, \
                                             std::vector<Tensor<T>>*);                             \
    template void StsaLayer::init<T>(ParameterStore<T>&, SplitMix64&) const;                       \
    template Var<T> StsaLayer::forward<T>(Tape<T>&, ParameterStore<T>&, const Var<T>&,             \
                                          AttentionProbe<T>*) const;                               \
    template void StsaModule::init<T>(ParameterStore<T>&, SplitMix64&) const;                      \
    template Var<T> StsaModule::forward<T>(Tape<T>&, ParameterStore<T>&, const Var<T>&,            \
                                           std::vector<AttentionProbe<T>>*) const;

STSA_INSTANTIATE(float)
STSA_INSTANTIATE(double)

}  // namespace stsa
