#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "stsa/saliency.hpp"
#include "test_util.hpp"

using namespace stsa;
using stsa::test::random_density;
using stsa::test::random_tensor;

namespace {

Tensor<double> grid(std::size_t h, std::size_t w, std::vector<double> v) { return Tensor<double>({h, w}, std::move(v)); }

double kl_oracle(const Tensor<double>& s, const Tensor<double>& g, double eps) {
    double acc = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) acc += g[i] * std::log(eps + g[i] / (eps + s[i]));
    return acc;
}

double value_at(const Tensor<double>& s, FixationPoint p) { return s.at({p.y, p.x}); }

// Fraction of (positive, negative) pairs ordered correctly, ties one half.
double pairwise_auc(const Tensor<double>& s, const std::vector<FixationPoint>& pos, const std::vector<FixationPoint>& neg) {
    double wins = 0.0;
    for (auto p : pos) {
        for (auto n : neg) {
            const double a = value_at(s, p), b = value_at(s, n);
            wins += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
        }
    }
    return wins / static_cast<double>(pos.size() * neg.size());
}

// Sweeps every distinct cell value as a threshold (>= classifies positive)
// and integrates the ROC with trapezoids from (0,0) to (1,1).
double roc_sweep_auc(const Tensor<double>& s, const std::vector<FixationPoint>& pos, const std::vector<FixationPoint>& neg) {
    std::set<double, std::greater<>> thresholds(s.data().begin(), s.data().end());
    double area = 0.0, prev_tpr = 0.0, prev_fpr = 0.0;
    for (double t : thresholds) {
        double tp = 0, fp = 0;
        for (auto p : pos) tp += value_at(s, p) >= t;
        for (auto n : neg) fp += value_at(s, n) >= t;
        const double tpr = tp / pos.size(), fpr = fp / neg.size();
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    return area + (1.0 - prev_fpr) * (1.0 + prev_tpr) / 2.0;
}

std::vector<FixationPoint> random_points(SplitMix64& rng, std::size_t n, std::size_t h, std::size_t w) {
    std::vector<FixationPoint> pts;
    for (std::size_t i = 0; i < n; ++i) pts.push_back({rng.below(w), rng.below(h)});
    return unique_points(pts, h, w);
}

std::vector<FixationPoint> complement(const std::vector<FixationPoint>& pts, std::size_t h, std::size_t w) {
    const std::set<FixationPoint> fixated(pts.begin(), pts.end());
    std::vector<FixationPoint> out;
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            if (!fixated.count({x, y})) out.push_back({x, y});
        }
    }
    return out;
}

// Map with a few repeated values so ties show up.
Tensor<double> quantized_map(SplitMix64& rng, std::size_t h, std::size_t w) {
    Tensor<double> s({h, w});
    for (auto& v : s.data()) v = static_cast<double>(rng.below(6)) / 5.0;
    return s;
}

}  // namespace

TEST(LossKl, UniformMatchesDirectFormula) {
    const auto u = grid(2, 2, {0.25, 0.25, 0.25, 0.25});
    Tape<double> tape;
    const double v = loss_kl(tape.constant(u), u).value()[0];
    EXPECT_NEAR(v, kl_oracle(u, u, 1e-7), 1e-15);
    EXPECT_LT(std::abs(v), 1e-5);
    EXPECT_NEAR(metric_kl(u, u), v, 1e-15);
}

TEST(LossKl, ConcentratedTargetApproachesLogN) {
    Tensor<double> g({4, 4}), s({4, 4}, 1.0 / 16.0);
    g[5] = 1.0;
    Tape<double> tape;
    const double v = loss_kl(tape.constant(s), g).value()[0];
    EXPECT_NEAR(v, std::log(16.0), 1e-5);
    EXPECT_NEAR(v, kl_oracle(s, g, 1e-7), 1e-12);
}

TEST(LossKl, ShapeMismatch) {
    Tape<double> tape;
    EXPECT_THROW(loss_kl(tape.constant(Tensor<double>({2, 2}, 0.25)), Tensor<double>({4, 1}, 0.25)), DimensionError);
    LossConfig bad;
    bad.epsilon = 0.0;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(LossCc, Cases) {
    SplitMix64 rng(1);
    const auto s = random_tensor(rng, {5, 6});
    Tensor<double> affine(s.shape()), neg(s.shape());
    for (std::size_t i = 0; i < s.size(); ++i) {
        affine[i] = 3.0 * s[i] + 2.0;
        neg[i] = -s[i];
    }
    EXPECT_NEAR(metric_cc(s, s), 1.0, 1e-12);
    EXPECT_NEAR(metric_cc(s, affine), 1.0, 1e-12);
    EXPECT_NEAR(metric_cc(s, neg), -1.0, 1e-12);
    Tape<double> tape;
    EXPECT_NEAR(loss_cc(tape.constant(s), affine).value()[0], 1.0, 1e-12);
    EXPECT_THROW(metric_cc(s, Tensor<double>({5, 6}, 0.3)), DegenerateMapError);
    EXPECT_THROW(loss_cc(tape.constant(Tensor<double>({5, 6}, 0.3)), s), DegenerateMapError);
}

TEST(LossTotal, EqualMapsGiveKlMinusOne) {
    SplitMix64 rng(2);
    const auto g = random_density(rng, {6, 5});
    Tape<double> tape;
    const double v = loss_total(tape.constant(g), g).value()[0];
    EXPECT_NEAR(v, kl_oracle(g, g, 1e-7) - 1.0, 1e-12);
    EXPECT_NEAR(v, -1.0, 1e-4);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
    SplitMix64 rng(3);
    const auto g = random_density(rng, {5, 6});
    const auto s = random_density(rng, {5, 6});
    using stsa::test::grad_check;
    // small cells make the third derivative of G log(G/S) large, so a fine step
    EXPECT_LT(grad_check([&](Tape<double>&, const std::vector<Var<double>>& in) { return loss_kl(in[0], g); }, {s}, 1e-6), 1e-5);
    EXPECT_LT(grad_check([&](Tape<double>&, const std::vector<Var<double>>& in) { return loss_cc(in[0], g); }, {s}, 1e-6), 1e-5);
    EXPECT_LT(grad_check([&](Tape<double>&, const std::vector<Var<double>>& in) { return loss_total(in[0], g); }, {s}, 1e-6), 1e-5);
}

TEST(Nss, Cases) {
    SplitMix64 rng(4);
    auto s = random_tensor(rng, {4, 5});
    std::vector<FixationPoint> all;
    for (std::size_t y = 0; y < 4; ++y) {
        for (std::size_t x = 0; x < 5; ++x) all.push_back({x, y});
    }
    EXPECT_NEAR(metric_nss(s, all), 0.0, 1e-12);

    s.at({2, 3}) = 5.0;
    double mean = 0.0, var = 0.0;
    for (double v : s.data()) mean += v / 20.0;
    for (double v : s.data()) var += (v - mean) * (v - mean) / 20.0;
    EXPECT_NEAR(metric_nss(s, {{3, 2}}), (5.0 - mean) / std::sqrt(var), 1e-12);

    Tensor<double> scaled(s.shape());
    for (std::size_t i = 0; i < s.size(); ++i) scaled[i] = 0.5 * s[i] + 7.0;
    EXPECT_NEAR(metric_nss(scaled, {{3, 2}, {0, 0}}), metric_nss(s, {{3, 2}, {0, 0}}), 1e-12);
    EXPECT_THROW(metric_nss(s, {}), ContractError);
    EXPECT_THROW(metric_nss(Tensor<double>({4, 5}, 1.0), {{0, 0}}), DegenerateMapError);
    EXPECT_THROW(metric_nss(s, {{5, 0}}), ContractError);
}

TEST(Sim, Cases) {
    EXPECT_NEAR(metric_sim(grid(2, 2, {.5, .5, 0, 0}), grid(2, 2, {.25, .25, .25, .25})), 0.5, 1e-15);
    EXPECT_NEAR(metric_sim(grid(2, 2, {1, 0, 0, 0}), grid(2, 2, {0, 0, 1, 1})), 0.0, 1e-15);
    SplitMix64 rng(5);
    const auto g = random_density(rng, {3, 3});
    EXPECT_NEAR(metric_sim(g, g), 1.0, 1e-12);
}

TEST(AucJudd, PerfectAndChance) {
    Tensor<double> s({4, 4}, 0.1);
    s.at({1, 2}) = 0.9;
    s.at({3, 0}) = 0.8;
    EXPECT_DOUBLE_EQ(metric_auc_judd(s, {{2, 1}, {0, 3}}), 1.0);
    EXPECT_DOUBLE_EQ(metric_auc_judd(Tensor<double>({4, 4}, 0.3), {{2, 1}, {0, 3}}), 0.5);
    EXPECT_THROW(metric_auc_judd(s, {}), ContractError);
}

TEST(AucJudd, SixBySixMatchesRocSweep) {
    SplitMix64 rng(6);
    const auto s = random_tensor(rng, {6, 6}, 0.0, 1.0);
    std::vector<FixationPoint> pts;
    while (pts.size() < 5) pts = random_points(rng, 5, 6, 6);
    const double got = metric_auc_judd(s, pts);
    EXPECT_NEAR(got, roc_sweep_auc(s, pts, complement(pts, 6, 6)), 1e-12);
    EXPECT_NEAR(got, pairwise_auc(s, pts, complement(pts, 6, 6)), 1e-12);
}

TEST(Sauc, Reductions) {
    SplitMix64 rng(7);
    const auto s = quantized_map(rng, 5, 5);
    const auto pts = random_points(rng, 6, 5, 5);
    EXPECT_NEAR(metric_sauc(s, pts, complement(pts, 5, 5)), metric_auc_judd(s, pts), 1e-12);
    EXPECT_DOUBLE_EQ(metric_sauc(s, pts, pts), 0.5);
    EXPECT_THROW(metric_sauc(s, pts, {}), ContractError);
    EXPECT_THROW(metric_sauc(s, {}, pts), ContractError);
}

TEST(RankAuc, HandCases) {
    EXPECT_DOUBLE_EQ(rank_auc({3, 4}, {1, 2}), 1.0);
    EXPECT_DOUBLE_EQ(rank_auc({1}, {1}), 0.5);
    EXPECT_DOUBLE_EQ(rank_auc({2, 0}, {1, 2}), 0.375);
}

TEST(NormalizeMap, SumsAndErrors) {
    const auto n = normalize_map(grid(1, 4, {1, 1, 2, 0}));
    EXPECT_EQ(n.values(), (std::vector<double>{.25, .25, .5, 0}));
    EXPECT_THROW(normalize_map(Tensor<double>({2, 2})), DegenerateMapError);
    EXPECT_THROW(normalize_map(grid(1, 2, {1, -1})), ContractError);
}

class SaliencyProperty : public ::testing::TestWithParam<int> {};

TEST_P(SaliencyProperty, AucMatchesBruteForceOn8x8) {
    // 20 seeds x 10 maps = 200 random instances
    for (int k = 0; k < 10; ++k) {
        SplitMix64 rng(700 + 10 * static_cast<std::uint64_t>(GetParam()) + k);
        const auto s = k % 2 ? quantized_map(rng, 8, 8) : random_tensor(rng, {8, 8}, 0.0, 1.0);
        std::vector<FixationPoint> pts, shuffle;
        while (pts.empty()) pts = random_points(rng, 1 + rng.below(12), 8, 8);
        while (shuffle.empty()) shuffle = random_points(rng, 1 + rng.below(20), 8, 8);
        const auto neg = complement(pts, 8, 8);
        EXPECT_NEAR(metric_auc_judd(s, pts), pairwise_auc(s, pts, neg), 1e-12);
        EXPECT_NEAR(metric_auc_judd(s, pts), roc_sweep_auc(s, pts, neg), 1e-12);
        EXPECT_NEAR(metric_sauc(s, pts, shuffle), pairwise_auc(s, pts, shuffle), 1e-12);
    }
}

TEST_P(SaliencyProperty, MetricRangesAndInvariances) {
    SplitMix64 rng(800 + static_cast<std::uint64_t>(GetParam()));
    const auto s = random_density(rng, {6, 7});
    const auto g = random_density(rng, {6, 7});
    std::vector<FixationPoint> pts;
    while (pts.empty()) pts = random_points(rng, 5, 6, 7);

    EXPECT_NEAR(metric_cc(s, g), metric_cc(g, s), 1e-9);
    const double sim = metric_sim(s, g);
    EXPECT_GE(sim, 0.0);
    EXPECT_LE(sim, 1.0);
    EXPECT_GE(metric_kl(s, g), -1e-5);
    Tape<double> tape;
    EXPECT_GE(loss_total(tape.constant(s), g).value()[0], -1.0 - 1e-5);

    // strictly increasing transform keeps both AUCs exactly
    Tensor<double> mono(s.shape()), affine(s.shape());
    for (std::size_t i = 0; i < s.size(); ++i) {
        mono[i] = std::exp(40.0 * s[i]) + s[i] * s[i] * s[i];
        affine[i] = 2.5 * s[i] + 1.0;
    }
    const auto shuffle = complement(pts, 6, 7);
    EXPECT_EQ(metric_auc_judd(mono, pts), metric_auc_judd(s, pts));
    EXPECT_EQ(metric_sauc(mono, pts, shuffle), metric_sauc(s, pts, shuffle));
    EXPECT_NEAR(metric_nss(affine, pts), metric_nss(s, pts), 1e-10);
}

INSTANTIATE_TEST_SUITE_P(Seeds, SaliencyProperty, ::testing::Range(0, 20));
