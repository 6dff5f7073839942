#include <gtest/gtest.h>

#include "stsa/fusion.hpp"
#include "stsa/ops.hpp"
#include "test_util.hpp"

using namespace stsa;
using stsa::test::random_tensor;
using stsa::test::store_grad_check;
using stsa::test::weighted_sum;

namespace {

AmsfConfig config(std::size_t deep, std::size_t c) {
    AmsfConfig cfg;
    cfg.deep_channels = deep;
    cfg.channels = c;
    return cfg;
}

ParameterStore<double> stage_store(const AmsfStage& stage, std::uint64_t seed) {
    SplitMix64 rng(seed);
    ParameterStore<double> store;
    stage.init(store, rng);
    return store;
}

}  // namespace

TEST(Amsf, AlignAndFuseShapes) {
    AmsfStage stage("f", config(16, 16));
    auto store = stage_store(stage, 1);
    SplitMix64 rng(1);
    Tape<double> tape;
    auto deep = tape.constant(random_tensor(rng, {1, 16, 4, 8, 6}));
    auto shallow = tape.constant(random_tensor(rng, {1, 16, 4, 16, 12}));
    auto pair = stage.align(tape, store, deep, shallow);
    EXPECT_EQ(pair.high.shape(), (Shape{1, 16, 4, 16, 12}));
    EXPECT_EQ(pair.low.shape(), (Shape{1, 16, 4, 16, 12}));
    EXPECT_EQ(stage.weight(tape, store, pair).shape(), (Shape{1, 16, 4, 16, 12}));
    EXPECT_EQ(stage.forward(tape, store, deep, shallow).shape(), (Shape{1, 16, 4, 16, 12}));
}

TEST(Amsf, AlignErrors) {
    AmsfStage stage("f", config(4, 4));
    auto store = stage_store(stage, 2);
    Tape<double> tape;
    auto ok = tape.constant(Tensor<double>({1, 4, 4, 4, 4}));
    EXPECT_THROW(stage.align(tape, store, tape.constant(Tensor<double>({1, 4, 3, 2, 2})), ok), DimensionError);
    EXPECT_THROW(stage.align(tape, store, tape.constant(Tensor<double>({1, 4, 4, 8, 8})), ok), DimensionError);
    EXPECT_THROW(AmsfStage("g", config(4, 6)), ConfigError);
}

TEST(Amsf, IdentityProjectionLeavesEqualShapesUnchanged) {
    AmsfStage stage("f", config(4, 4));
    auto store = stage_store(stage, 3);
    auto& w = store.value("f.project.weight");
    w.fill(0.0);
    for (std::size_t c = 0; c < 4; ++c) w[c * 4 + c] = 1.0;
    store.value("f.project.bias").fill(0.0);
    SplitMix64 rng(3);
    const auto deep = random_tensor(rng, {1, 4, 4, 3, 5});
    Tape<double> tape;
    auto pair = stage.align(tape, store, tape.constant(deep), tape.constant(random_tensor(rng, {1, 4, 4, 3, 5})));
    for (std::size_t i = 0; i < deep.size(); ++i) EXPECT_NEAR(pair.high.value()[i], deep[i], 1e-12);
}

TEST(Amsf, SaturatedGatesSelectHighFeature) {
    AmsfStage stage("f", config(8, 8));
    auto store = stage_store(stage, 4);
    store.value("f.excite.weight").fill(0.0);
    auto& b = store.value("f.excite.bias");
    for (std::size_t i = 0; i < 16; ++i) b[i] = i < 8 ? 30.0 : -30.0;
    SplitMix64 rng(4);
    Tape<double> tape;
    auto pair = stage.align(tape, store, tape.constant(random_tensor(rng, {1, 8, 4, 2, 3})),
                            tape.constant(random_tensor(rng, {1, 8, 4, 4, 6})));
    const auto out = stage.weight(tape, store, pair).value();
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], pair.high.value()[i], 1e-3);
}

TEST(Amsf, EqualInputsScaleBySummedWeights) {
    AmsfStage stage("f", config(8, 8));
    auto store = stage_store(stage, 5);
    SplitMix64 rng(5);
    const auto f = random_tensor(rng, {1, 8, 4, 3, 3});
    Tape<double> tape;
    auto v = tape.constant(f);
    AmsfProbe<double> probe;
    const auto out = stage.weight(tape, store, FusionPair<double>{v, v}, &probe).value();
    for (std::size_t c = 0; c < 8; ++c) {
        for (std::size_t t = 0; t < 4; ++t) {
            const double w = probe.weight_high.value().at({0, c, t, 0, 0}) + probe.weight_low.value().at({0, c, t, 0, 0});
            for (std::size_t y = 0; y < 3; ++y) {
                for (std::size_t x = 0; x < 3; ++x) {
                    EXPECT_NEAR(out.at({0, c, t, y, x}), f.at({0, c, t, y, x}) * w, 1e-12);
                }
            }
        }
    }
}

TEST(Amsf, ZeroDeepLeavesOnlyShallowTerm) {
    AmsfStage stage("f", config(8, 4));
    auto store = stage_store(stage, 6);
    store.value("f.project.bias").fill(0.0);
    SplitMix64 rng(6);
    const auto shallow = random_tensor(rng, {1, 4, 4, 4, 4});
    Tape<double> tape;
    AmsfProbe<double> probe;
    auto pair = stage.align(tape, store, tape.constant(Tensor<double>({1, 8, 4, 2, 2})), tape.constant(shallow));
    const auto out = stage.weight(tape, store, pair, &probe).value();
    for (double h : pair.high.value().data()) EXPECT_EQ(h, 0.0);
    for (std::size_t c = 0; c < 4; ++c) {
        for (std::size_t t = 0; t < 4; ++t) {
            const double wl = probe.weight_low.value().at({0, c, t, 0, 0});
            for (std::size_t p = 0; p < 16; ++p) {
                const std::size_t i = (c * 4 + t) * 16 + p;
                EXPECT_NEAR(out[i], shallow[i] * wl, 1e-12);
            }
        }
    }
}

TEST(Amsf, NoWeightingIsPlainSum) {
    AmsfConfig cfg = config(4, 4);
    cfg.attentional_weighting = false;
    AmsfStage stage("f", cfg);
    auto store = stage_store(stage, 7);
    SplitMix64 rng(7);
    const auto a = random_tensor(rng, {1, 4, 4, 2, 2});
    const auto b = random_tensor(rng, {1, 4, 4, 2, 2});
    Tape<double> tape;
    const auto out = stage.weight(tape, store, FusionPair<double>{tape.constant(a), tape.constant(b)}).value();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_DOUBLE_EQ(out[i], a[i] + b[i]);
}

TEST(Multiscale, ShapeAndConstantPoolBranch) {
    AmsfStage stage("f", config(8, 8));
    auto store = stage_store(stage, 8);
    auto& w = store.value("f.ms.pool.weight");
    w.fill(0.0);
    for (std::size_t o = 0; o < 2; ++o) w[o * 8 + o] = 1.0;
    store.value("f.ms.pool.bias").fill(0.0);
    Tape<double> tape;
    const auto out = stage.multiscale(tape, store, tape.constant(Tensor<double>({1, 8, 4, 5, 3}, 2.5))).value();
    EXPECT_EQ(out.shape(), (Shape{1, 8, 4, 5, 3}));
    const auto d = slice_tensor(out, 1, 6, 2);
    for (double v : d.data()) EXPECT_NEAR(v, 2.5, 1e-12);
    EXPECT_THROW(stage.multiscale(tape, store, tape.constant(Tensor<double>({1, 4, 4, 5, 3}))), DimensionError);
}

TEST(Multiscale, GradientMatchesFiniteDifferences) {
    AmsfStage stage("f", config(8, 8));
    auto store = stage_store(stage, 9);
    SplitMix64 rng(9);
    store.add("x", random_tensor(rng, {1, 8, 4, 4, 4}));
    const auto w = random_tensor(rng, {1, 8, 4, 4, 4});
    EXPECT_LT(store_grad_check(store,
                               [&](Tape<double>& tape, ParameterStore<double>& s) {
                                   return weighted_sum(stage.multiscale(tape, s, tape.parameter(s, "x")), w);
                               }),
              1e-5);
}

TEST(Amsf, AlignGradientMatchesFiniteDifferences) {
    AmsfStage stage("f", config(4, 4));
    auto store = stage_store(stage, 10);
    SplitMix64 rng(10);
    store.add("deep", random_tensor(rng, {1, 4, 4, 2, 3}));
    const auto shallow = random_tensor(rng, {1, 4, 4, 4, 5});
    const auto w = random_tensor(rng, {1, 4, 4, 4, 5});
    EXPECT_LT(store_grad_check(store,
                               [&](Tape<double>& tape, ParameterStore<double>& s) {
                                   auto pair = stage.align(tape, s, tape.parameter(s, "deep"), tape.constant(shallow));
                                   return weighted_sum(pair.high, w);
                               }),
              1e-6);
}

TEST(Amsf, AdditionHasFewerParametersThanConcatenation) {
    AmsfConfig add_cfg = config(8, 8);
    AmsfConfig cat_cfg = add_cfg;
    cat_cfg.fusion = FusionMode::concatenation;
    auto a = stage_store(AmsfStage("f", add_cfg), 11);
    auto c = stage_store(AmsfStage("f", cat_cfg), 11);
    EXPECT_LT(a.scalar_count(), c.scalar_count());
}

TEST(Amsf, DeterministicGivenSeed) {
    AmsfStage stage("f", config(8, 4));
    auto s1 = stage_store(stage, 12);
    auto s2 = stage_store(stage, 12);
    SplitMix64 rng(12);
    const auto deep = random_tensor(rng, {1, 8, 4, 2, 2});
    const auto shallow = random_tensor(rng, {1, 4, 4, 4, 4});
    Tape<double> t1, t2;
    EXPECT_EQ(stage.forward(t1, s1, t1.constant(deep), t1.constant(shallow)).value().values(),
              stage.forward(t2, s2, t2.constant(deep), t2.constant(shallow)).value().values());
}

class AmsfProperty : public ::testing::TestWithParam<int> {};

TEST_P(AmsfProperty, WeightsStrictlyInsideUnitInterval) {
    const std::uint64_t seed = 500 + static_cast<std::uint64_t>(GetParam());
    for (bool swap : {false, true}) {
        AmsfConfig cfg = config(8, 4);
        cfg.relu_before_norm = swap;
        AmsfStage stage("f", cfg);
        auto store = stage_store(stage, seed);
        SplitMix64 rng(seed);
        Tape<double> tape;
        AmsfProbe<double> probe;
        auto out = stage.forward(tape, store, tape.constant(random_tensor(rng, {1, 8, 4, 2, 3}, -4, 4)),
                                 tape.constant(random_tensor(rng, {1, 4, 4, 4, 6}, -4, 4)), &probe);
        EXPECT_EQ(out.shape(), (Shape{1, 4, 4, 4, 6}));
        EXPECT_EQ(probe.spatial_mask.shape(), (Shape{1, 1, 4, 4, 6}));
        EXPECT_EQ(probe.weight_high.shape(), (Shape{1, 4, 4, 1, 1}));
        for (const auto* w : {&probe.spatial_mask, &probe.weight_high, &probe.weight_low}) {
            for (double v : w->value().data()) {
                EXPECT_GT(v, 0.0);
                EXPECT_LT(v, 1.0);
            }
        }
    }
}

TEST_P(AmsfProperty, StageGradient) {
    const std::uint64_t seed = 600 + static_cast<std::uint64_t>(GetParam());
    AmsfStage stage("f", config(4, 4));
    auto store = stage_store(stage, seed);
    SplitMix64 rng(seed);
    store.add("deep", random_tensor(rng, {1, 4, 4, 2, 2}));
    store.add("shallow", random_tensor(rng, {1, 4, 4, 3, 3}));
    const auto w = random_tensor(rng, {1, 4, 4, 3, 3});
    EXPECT_LT(store_grad_check(store,
                               [&](Tape<double>& tape, ParameterStore<double>& s) {
                                   return weighted_sum(stage.forward(tape, s, tape.parameter(s, "deep"),
                                                                     tape.parameter(s, "shallow")),
                                                       w);
                               }),
              1e-3);
}

INSTANTIATE_TEST_SUITE_P(Seeds, AmsfProperty, ::testing::Range(0, 20));
