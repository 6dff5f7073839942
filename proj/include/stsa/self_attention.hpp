#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "stsa/layers.hpp"

namespace stsa {

enum class StsaVariant { full, no_temporal_relations, single_similarity };

struct StsaConfig {
    std::size_t channels = 8;
    bool use_bottleneck = false;
    StsaVariant variant = StsaVariant::full;
    bool attention_scaling = false;
    bool use_layer1 = true;
    bool use_layer2 = true;

    /// ConfigError unless channels and channels/2 are even (both layers halve
    /// their width for queries and keys).
    void validate() const;
};

/// Which slices of the T=4 axis attend to which.
///  pairwise_frames: parts of length 1; slots filled by (q2,kv1),(q1,kv2),(q4,kv3),(q3,kv4).
///  pairwise_halves: parts of length 2; slots filled by (q34,kv12),(q12,kv34).
///  per_frame:       parts of length 1, each attending to itself.
///  whole_clip:      a single part spanning all four steps.
enum class AttentionPattern { pairwise_frames, pairwise_halves, per_frame, whole_clip };

/// Embeddings of one temporal part, flattened to matrices over its T'HW grid.
template <typename T>
struct QkvEmbedding {
    Var<T> query;  // (C/2, T'HW)
    Var<T> key;    // (C/2, T'HW)
    Var<T> value;  // (C, T'HW)
    std::size_t part = 0;
};

/// Optional view into a layer's internals, for tests and diagnostics.
template <typename T>
struct AttentionProbe {
    std::vector<Tensor<T>> similarities;  // softmax(q^T k), one per attention call
    Var<T> attended;                      // concatenated outputs before Norm, full resolution
};

/// Splits x (N,C,4,H,W) along time into consecutive parts of the given lengths.
template <typename T>
std::vector<Var<T>> temporal_split(const Var<T>& x, const std::vector<std::size_t>& lengths);

/// Query/key/value convolutions of one attention layer.
struct QkvProjection {
    std::string prefix;
    std::size_t channels = 2;
    ConvLayer query_reduce, query_spatial, key_reduce, key_spatial, value_vertical,
        value_horizontal;

    QkvProjection() = default;
    QkvProjection(std::string prefix, std::size_t channels);

    template <typename T>
    void init(ParameterStore<T>& store, SplitMix64& rng) const;

    /// Convolves a whole (1,C,T,H,W) map. The temporal kernel extent is 1
    /// everywhere, so slicing the result equals embedding each part alone.
    template <typename T>
    std::array<Var<T>, 3> embed_map(Tape<T>& tape, ParameterStore<T>& store, const Var<T>& x) const;

    /// Embedding of a single part (1,C,T',H,W), reshaped to matrices.
    template <typename T>
    QkvEmbedding<T> embed(Tape<T>& tape, ParameterStore<T>& store, const Var<T>& part,
                          std::size_t part_id = 0) const;
};

/// DA: S = softmax(q_from.query^T kv_from.key) over keys, out = (S v^T)^T,
/// shape (C, T'HW of the query part). Optionally records S.
template <typename T>
Var<T> dot_product_attention(const QkvEmbedding<T>& q_from, const QkvEmbedding<T>& kv_from,
                             bool scaling = false, std::vector<Tensor<T>>* similarities = nullptr);

/// One attention layer with residual and channel Norm:
/// out = x + Norm(concat of attention slots). With a bottleneck, attention
/// runs on a 1x2x2 max-pooled copy and is unpooled before Norm.
class StsaLayer {
public:
    StsaLayer() = default;
    StsaLayer(std::string prefix, std::size_t channels, AttentionPattern pattern, bool bottleneck,
              bool scaling);

    template <typename T>
    void init(ParameterStore<T>& store, SplitMix64& rng) const;

    template <typename T>
    Var<T> forward(Tape<T>& tape, ParameterStore<T>& store, const Var<T>& x,
                   AttentionProbe<T>* probe = nullptr) const;

    AttentionPattern pattern() const noexcept { return pattern_; }
    std::size_t channels() const noexcept { return channels_; }
    bool bottleneck() const noexcept { return bottleneck_; }
    const QkvProjection& projection() const noexcept { return qkv_; }
    const ChannelNorm& norm() const noexcept { return norm_; }

    /// Part lengths along T and (query part, key/value part) per output slot.
    std::vector<std::size_t> part_lengths() const;
    std::vector<std::pair<std::size_t, std::size_t>> slots() const;

private:
    template <typename T>
    Var<T> attend(Tape<T>& tape, ParameterStore<T>& store, const Var<T>& x,
                  std::vector<Tensor<T>>* similarities) const;

    std::string prefix_;
    std::size_t channels_ = 2;
    AttentionPattern pattern_ = AttentionPattern::pairwise_frames;
    bool bottleneck_ = false;
    bool scaling_ = false;
    QkvProjection qkv_;
    ChannelNorm norm_;
};

/// Layer I at width C, a 1x1x1 conv halving the channels, layer II at C/2.
/// Output (N, C/2, 4, H, W).
class StsaModule {
public:
    StsaModule() = default;
    StsaModule(std::string prefix, const StsaConfig& cfg);

    template <typename T>
    void init(ParameterStore<T>& store, SplitMix64& rng) const;

    /// probes, when given, receives one entry per active layer.
    template <typename T>
    Var<T> forward(Tape<T>& tape, ParameterStore<T>& store, const Var<T>& x,
                   std::vector<AttentionProbe<T>>* probes = nullptr) const;

    const StsaConfig& config() const noexcept { return cfg_; }
    const StsaLayer& layer1() const noexcept { return layer1_; }
    const StsaLayer& layer2() const noexcept { return layer2_; }

private:
    StsaConfig cfg_;
    StsaLayer layer1_;
    ConvLayer middle_;
    StsaLayer layer2_;
};

/// Attention patterns used by each layer for a variant.
AttentionPattern layer1_pattern(StsaVariant v);
AttentionPattern layer2_pattern(StsaVariant v);

}  // namespace stsa
