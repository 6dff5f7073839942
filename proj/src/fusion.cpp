#include "stsa/fusion.hpp"

#include <algorithm>

namespace stsa {

void AmsfConfig::validate() const {
    if (channels == 0 || deep_channels == 0) throw ConfigError("fusion channels must be positive");
    if (multiscale && channels % 4 != 0) {
        throw ConfigError("multi-scale block needs channels divisible by 4, got " +
                          std::to_string(channels));
    }
}

AmsfStage::AmsfStage(std::string prefix, const AmsfConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t c = cfg_.channels;
    const std::size_t c2 = 2 * c;
    reduced_ = std::max<std::size_t>(1, c2 / 4);
    project_ = ConvLayer(prefix + ".project", cfg_.deep_channels, pointwise(c));
    if (cfg_.attentional_weighting) {
        mask_ = ConvLayer(prefix + ".mask", c2, pointwise(1));
        squeeze_ = ConvLayer(prefix + ".squeeze", c2, pointwise(reduced_));
        squeeze_norm_ = ChannelNorm{prefix + ".squeeze_norm", reduced_};
        excite_ = ConvLayer(prefix + ".excite", reduced_, pointwise(c2));
        if (cfg_.fusion == FusionMode::concatenation) {
            merge_ = ConvLayer(prefix + ".merge", c2, pointwise(c));
        }
    }
    if (cfg_.multiscale) {
        const std::size_t q = c / 4;
        branch_point_ = ConvLayer(prefix + ".ms.point", c, pointwise(q));
        branch_spatial_ = ConvLayer(prefix + ".ms.spatial", c,
                                    ConvSpec{q, {1, 3, 3}, {1, 1, 1}, {0, 1, 1}, true});
        branch_cube_ = ConvLayer(prefix + ".ms.cube", c,
                                 ConvSpec{q, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, true});
        branch_pool_ = ConvLayer(prefix + ".ms.pool", c, pointwise(q));
    }
}

template <typename T>
void AmsfStage::init(ParameterStore<T>& store, SplitMix64& rng) const {
    project_.init(store, rng);
    if (cfg_.attentional_weighting) {
        mask_.init(store, rng);
        squeeze_.init(store, rng);
        squeeze_norm_.init(store);
        excite_.init(store, rng);
        if (cfg_.fusion == FusionMode::concatenation) merge_.init(store, rng);
    }
    if (cfg_.multiscale) {
        branch_point_.init(store, rng);
        branch_spatial_.init(store, rng);
        branch_cube_.init(store, rng);
        branch_pool_.init(store, rng);
    }
}

template <typename T>
FusionPair<T> AmsfStage::align(Tape<T>& tape, ParameterStore<T>& store, const Var<T>& deep,
                               const Var<T>& shallow) const {
    const Shape& d = deep.shape();
    const Shape& s = shallow.shape();
    if (d.size() != 5 || s.size() != 5) throw DimensionError("fusion inputs must be rank 5");
    if (d[2] != 4 || s[2] != 4) {
        throw DimensionError("fusion inputs need 4 time steps, got " + std::to_string(d[2]) +
                             " and " + std::to_string(s[2]));
    }
    if (d[0] != s[0] || d[3] > s[3] || d[4] > s[4]) {
        throw DimensionError("fusion: deeper map " + to_string(d) + " does not fit shallower map " +
                             to_string(s));
    }
    if (s[1] != cfg_.channels) {
        throw DimensionError("fusion: expected " + std::to_string(cfg_.channels) +
                             " shallow channels, got " + std::to_string(s[1]));
    }
    Var<T> high = project_(tape, store, deep);
    high = upsample_trilinear(high, Triple{4, s[3], s[4]});
    return FusionPair<T>{high, shallow};
}

template <typename T>
Var<T> AmsfStage::weight(Tape<T>& tape, ParameterStore<T>& store, const FusionPair<T>& pair,
                         AmsfProbe<T>* probe) const {
    if (pair.high.shape() != pair.low.shape()) {
        throw DimensionError("fusion pair shapes differ: " + to_string(pair.high.shape()) + " vs " +
                             to_string(pair.low.shape()));
    }
    if (!cfg_.attentional_weighting) return add(pair.high, pair.low);

    const std::size_t c = cfg_.channels;
    Var<T> both = concat(std::vector<Var<T>>{pair.high, pair.low}, 1);
    Var<T> w_m = sigmoid(mask_(tape, store, both));
    Var<T> f_m = mul(both, w_m);

    Var<T> z = squeeze_(tape, store, global_avg_pool_spatial(f_m));
    z = cfg_.relu_before_norm ? squeeze_norm_(tape, store, relu(z))
                              : relu(squeeze_norm_(tape, store, z));
    Var<T> w = sigmoid(excite_(tape, store, z));
    Var<T> w_h = slice(w, 1, 0, c);
    Var<T> w_l = slice(w, 1, c, c);
    if (probe) *probe = AmsfProbe<T>{w_m, w_h, w_l};

    Var<T> a = mul(pair.high, w_h);
    Var<T> b = mul(pair.low, w_l);
    if (cfg_.fusion == FusionMode::concatenation) {
        return merge_(tape, store, concat(std::vector<Var<T>>{a, b}, 1));
    }
    return add(a, b);
}

template <typename T>
Var<T> AmsfStage::multiscale(Tape<T>& tape, ParameterStore<T>& store, const Var<T>& x) const {
    if (x.shape().size() != 5 || x.shape()[1] != cfg_.channels) {
        throw DimensionError("multi-scale block expects " + std::to_string(cfg_.channels) +
                             " channels, got " + to_string(x.shape()));
    }
    Var<T> a = branch_point_(tape, store, x);
    Var<T> b = branch_spatial_(tape, store, x);
    Var<T> c = branch_cube_(tape, store, x);
    Var<T> d = branch_pool_(tape, store, avgpool3d(x, Triple{3, 3, 3}, Triple{1, 1, 1}, Triple{1, 1, 1}));
    return concat(std::vector<Var<T>>{a, b, c, d}, 1);
}

template <typename T>
Var<T> AmsfStage::forward(Tape<T>& tape, ParameterStore<T>& store, const Var<T>& deep,
                          const Var<T>& shallow, AmsfProbe<T>* probe) const {
    Var<T> fused = weight(tape, store, align(tape, store, deep, shallow), probe);
    return cfg_.multiscale ? multiscale(tape, store, fused) : fused;
}

#define STSA_INSTANTIATE(T)                                                                         \
    template void AmsfStage::init<T>(ParameterStore<T>&, SplitMix64&) const;                      \
    template FusionPair<T> AmsfStage::align<T>(Tape<T>&, ParameterStore<T>&, const Var<T>&,        \
                                               const Var<T>&) const;                              \
    template Var<T> AmsfStage::weight<T>(Tape<T>&, ParameterStore<T>&, const FusionPair<T>&,       \
                                         AmsfProbe<T>*) const;                                    \
    template Var<T> AmsfStage::multiscale<T>(Tape<T>&, ParameterStore<T>&, const Var<T>&) const;   \
    template Var<T> AmsfStage::forward<T>(Tape<T>&, ParameterStore<T>&, const Var<T>&,             \
                                          const Var<T>&, AmsfProbe<T>*) const;

STSA_INSTANTIATE(float)
STSA_INSTANTIATE(double)

}  // namespace stsa
