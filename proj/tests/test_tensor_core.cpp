#include <gtest/gtest.h>

#include "stsa/gradcheck.hpp"
#include "stsa/ops.hpp"
#include "stsa/parameter_store.hpp"
#include "test_util.hpp"

using namespace stsa;
using stsa::test::grad_check;
using stsa::test::random_tensor;
using stsa::test::weighted_sum;

TEST(Tensor, RejectsZeroExtent) {
    EXPECT_THROW(Tensor<float>(Shape{2, 0, 3}), DimensionError);
    EXPECT_THROW(Tensor<float>(Shape{}), DimensionError);
    EXPECT_THROW(Tensor<float>(Shape{2, 2}, std::vector<float>(3)), DimensionError);
}

TEST(Tensor, RowMajorOffsets) {
    Tensor<double> t({2, 3, 4});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
    EXPECT_EQ(t.at({1, 2, 3}), 23.0);
    EXPECT_EQ(t.at({0, 1, 0}), 4.0);
    EXPECT_THROW(t.at({2, 0, 0}), DimensionError);
}

TEST(Matmul, IdentityAndHandCase) {
    Tape<double> tape;
    auto eye = tape.constant(Tensor<double>({2, 2}, {1, 0, 0, 1}));
    auto m = tape.constant(Tensor<double>({2, 2}, {3, -1, 2.5, 7}));
    EXPECT_EQ(matmul(eye, m).value().values(), m.value().values());

    auto a = tape.constant(Tensor<double>({2, 2}, {1, 2, 3, 4}));
    auto b = tape.constant(Tensor<double>({2, 1}, {5, 6}));
    auto c = matmul(a, b);
    EXPECT_EQ(c.shape(), (Shape{2, 1}));
    EXPECT_EQ(c.value()[0], 17.0);
    EXPECT_EQ(c.value()[1], 39.0);
}

TEST(Matmul, MismatchNamesBothShapes) {
    Tape<double> tape;
    auto a = tape.constant(Tensor<double>({2, 3}));
    auto b = tape.constant(Tensor<double>({4, 2}));
    try {
        matmul(a, b);
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("(2,3)"), std::string::npos) << msg;
        EXPECT_NE(msg.find("(4,2)"), std::string::npos) << msg;
    }
}

TEST(Matmul, GradientMatchesFiniteDifferencesTightly) {
    SplitMix64 rng(3);
    const auto w = random_tensor(rng, {5, 3});
    const double err = grad_check(
        [&](Tape<double>&, const std::vector<Var<double>>& v) { return weighted_sum(matmul(v[0], v[1]), w); },
        {random_tensor(rng, {5, 7}), random_tensor(rng, {7, 3})});
    EXPECT_LT(err, 1e-6);
}

TEST(Softmax, UniformAndStable) {
    Tape<double> tape;
    auto z = softmax_lastdim(tape.constant(Tensor<double>({1, 4})));
    for (double v : z.value().data()) EXPECT_DOUBLE_EQ(v, 0.25);

    Tape<float> tf;
    auto s = softmax_lastdim(tf.constant(Tensor<float>({1, 2}, {1000.0f, 0.0f})));
    EXPECT_EQ(s.value()[0], 1.0f);
    EXPECT_EQ(s.value()[1], 0.0f);
    EXPECT_TRUE(std::isfinite(s.value()[1]));
}

TEST(Softmax, RowsSumToOneAndGradient) {
    SplitMix64 rng(5);
    Tape<double> tape;
    auto s = softmax_lastdim(tape.constant(random_tensor(rng, {3, 5}, -3, 3)));
    for (std::size_t r = 0; r < 3; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < 5; ++c) {
            EXPECT_GE(s.value().at({r, c}), 0.0);
            sum += s.value().at({r, c});
        }
        EXPECT_NEAR(sum, 1.0, 1e-6);
    }
    const auto w = random_tensor(rng, {3, 5});
    EXPECT_LT(grad_check([&](Tape<double>&, const std::vector<Var<double>>& v) {
                  return weighted_sum(softmax_lastdim(v[0]), w);
              },
              {random_tensor(rng, {3, 5}, -3, 3)}),
              1e-6);
}

TEST(LayerNorm, ConstantInputGivesBeta) {
    Tape<double> tape;
    auto x = tape.constant(Tensor<double>({2, 3}, 4.0));
    auto gamma = tape.constant(Tensor<double>({3}, {1, 2, 3}));
    auto beta = tape.constant(Tensor<double>({3}, {0.5, -1, 2}));
    auto y = layer_norm(x, gamma, beta, {1});
    for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(y.value().at({r, c}), beta.value()[c]);
    }
}

TEST(LayerNorm, TwoValueCase) {
    Tape<double> tape;
    auto y = layer_norm(tape.constant(Tensor<double>({1, 2}, {1, 3})), tape.constant(Tensor<double>({2}, 1.0)),
                        tape.constant(Tensor<double>({2})), {1});
    const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
    EXPECT_NEAR(y.value()[0], -expect, 1e-12);
    EXPECT_NEAR(y.value()[1], expect, 1e-12);
}

TEST(LayerNorm, SliceStatisticsAndGradient) {
    SplitMix64 rng(8);
    Tape<double> tape;
    auto y = layer_norm(tape.constant(random_tensor(rng, {4, 8, 6}, -2, 5)),
                        tape.constant(Tensor<double>({6}, 1.0)), tape.constant(Tensor<double>({6})), {2});
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 8; ++j) {
            double m = 0.0, v = 0.0;
            for (std::size_t k = 0; k < 6; ++k) m += y.value().at({i, j, k});
            m /= 6.0;
            for (std::size_t k = 0; k < 6; ++k) v += std::pow(y.value().at({i, j, k}) - m, 2);
            v /= 6.0;
            EXPECT_NEAR(m, 0.0, 1e-4);
            EXPECT_NEAR(v, 1.0, 1e-4);
        }
    }
    const auto w = random_tensor(rng, {4, 8, 6});
    EXPECT_LT(grad_check([&](Tape<double>&, const std::vector<Var<double>>& v) {
                  return weighted_sum(layer_norm(v[0], v[1], v[2], {2}), w);
              },
              {random_tensor(rng, {4, 8, 6}), random_tensor(rng, {6}), random_tensor(rng, {6})}),
              1e-5);
}

TEST(LayerNorm, AxisOutOfRange) {
    Tape<double> tape;
    auto x = tape.constant(Tensor<double>({2, 3}));
    auto g = tape.constant(Tensor<double>({3}));
    EXPECT_THROW(layer_norm(x, g, g, {2}), DimensionError);
}

TEST(Activation, ReferenceValues) {
    Tape<double> tape;
    EXPECT_DOUBLE_EQ(sigmoid(tape.constant(Tensor<double>::scalar(0.0))).value()[0], 0.5);
    auto r = relu(tape.constant(Tensor<double>({2}, {-3.0, 3.0})));
    EXPECT_EQ(r.value()[0], 0.0);
    EXPECT_EQ(r.value()[1], 3.0);
}

TEST(Activation, GradientsAwayFromKink) {
    SplitMix64 rng(9);
    Tensor<double> x = random_tensor(rng, {4, 5}, 0.1, 1.0);
    for (std::size_t i = 0; i < x.size(); i += 2) x[i] = -x[i];
    const auto w = random_tensor(rng, {4, 5});
    for (Activation kind : {Activation::relu, Activation::sigmoid}) {
        EXPECT_LT(grad_check([&](Tape<double>&, const std::vector<Var<double>>& v) {
                      return weighted_sum(apply_activation(v[0], kind), w);
                  },
                  {x}),
                  1e-6);
    }
}

TEST(Elementwise, IdentitiesAndBroadcast) {
    SplitMix64 rng(10);
    Tape<double> tape;
    auto a = tape.constant(random_tensor(rng, {3, 4, 2, 2}));
    EXPECT_EQ(add(a, tape.constant(Tensor<double>({3, 4, 2, 2}))).value().values(), a.value().values());
    EXPECT_EQ(mul(a, tape.constant(Tensor<double>({1, 4, 2, 2}, 1.0))).value().values(), a.value().values());
    EXPECT_THROW(mul(a, tape.constant(Tensor<double>({2, 4, 2, 2}))), DimensionError);
    EXPECT_THROW(mul(a, tape.constant(Tensor<double>({4, 2, 2}))), DimensionError);
}

TEST(Elementwise, BroadcastMulGradientBothOperands) {
    SplitMix64 rng(11);
    const auto w = random_tensor(rng, {2, 3, 4});
    EXPECT_LT(grad_check([&](Tape<double>&, const std::vector<Var<double>>& v) {
                  return weighted_sum(mul(v[0], v[1]), w);
              },
              {random_tensor(rng, {2, 3, 4}), random_tensor(rng, {1, 3, 1})}),
              1e-6);
}

TEST(Reshape, RoundTripsBitExactly) {
    SplitMix64 rng(12);
    Tape<double> tape;
    auto x = tape.constant(random_tensor(rng, {6, 1, 4, 5}));
    auto back = reshape(reshape(x, {6, 20}), {6, 1, 4, 5});
    EXPECT_EQ(back.shape(), x.shape());
    EXPECT_EQ(back.value().values(), x.value().values());
    EXPECT_THROW(reshape(x, {7, 20}), DimensionError);
}

TEST(Transpose, EntriesAndInvolution) {
    Tape<double> tape;
    auto m = tape.constant(Tensor<double>({2, 3}, {1, 2, 3, 4, 5, 6}));
    auto t = transpose(m);
    EXPECT_EQ(t.shape(), (Shape{3, 2}));
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(t.value().at({j, i}), m.value().at({i, j}));
    }
    EXPECT_EQ(transpose(t).value().values(), m.value().values());
}

TEST(Backward, SimpleSums) {
    ParameterStore<double> store;
    store.add("w", Tensor<double>({3}, {1.0, -2.0, 0.5}));
    {
        Tape<double> tape;
        tape.backward(sum(tape.parameter(store, "w")));
    }
    for (double g : store.grad("w").data()) EXPECT_EQ(g, 1.0);
    store.zero_grad();
    {
        Tape<double> tape;
        auto w = tape.parameter(store, "w");
        tape.backward(sum(mul(w, w)));
    }
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(store.grad("w")[i], 2.0 * store.value("w")[i]);
}

TEST(Backward, RepeatedCallsAccumulate) {
    ParameterStore<double> store;
    store.add("w", Tensor<double>({2}, {1.0, 2.0}));
    for (int k = 0; k < 3; ++k) {
        Tape<double> tape;
        tape.backward(sum(tape.parameter(store, "w")));
    }
    EXPECT_EQ(store.grad("w")[0], 3.0);
    EXPECT_EQ(store.grad("w")[1], 3.0);
}

TEST(Backward, NonScalarLossRejected) {
    Tape<double> tape;
    auto x = tape.variable(Tensor<double>({2}));
    EXPECT_THROW(tape.backward(x), ContractError);
}

TEST(Backward, InferenceTapeKeepsNoGradients) {
    ParameterStore<double> store;
    store.add("w", Tensor<double>({2}, 1.0));
    Tape<double> tape(false);
    auto w = tape.parameter(store, "w");
    auto loss = sum(mul(w, w));
    EXPECT_FALSE(tape.requires_grad(loss.id()));
    tape.backward(loss);
    EXPECT_EQ(store.grad("w")[0], 0.0);
}

TEST(FiniteDiff, ClosedForms) {
    const auto g = finite_diff_grad<double>(
        [](const Tensor<double>& x) {
            double s = 0.0;
            for (double v : x.data()) s += v * v;
            return s;
        },
        Tensor<double>({2}, {1.0, 2.0}), 1e-4);
    EXPECT_NEAR(g[0], 2.0, 1e-8);
    EXPECT_NEAR(g[1], 4.0, 1e-8);

    const auto s = finite_diff_grad<double>(
        [](const Tensor<double>& x) {
            double t = 0.0;
            for (double v : x.data()) t += 1.0 / (1.0 + std::exp(-v));
            return t;
        },
        Tensor<double>({3}), 1e-4);
    for (double v : s.data()) EXPECT_NEAR(v, 0.25, 1e-8);
    EXPECT_THROW(finite_diff_grad<double>([](const Tensor<double>&) { return 0.0; }, Tensor<double>({1}), 0.0),
                 ContractError);
}

TEST(FiniteDiff, AgreesWithBackwardOnSmallNet) {
    SplitMix64 rng(13);
    const auto w1 = random_tensor(rng, {4, 3});
    const auto x = random_tensor(rng, {3, 2});
    auto net = [&](Tape<double>& tape, const Var<double>& w) {
        return sum(softmax_lastdim(matmul(w, tape.constant(x))));
    };
    Tape<double> tape;
    auto w = tape.variable(w1);
    auto out = mul(sum(sigmoid(matmul(w, tape.constant(x)))), net(tape, w));
    tape.backward(out);
    const auto fd = finite_diff_grad<double>(
        [&](const Tensor<double>& wv) {
            Tape<double> t;
            auto v = t.constant(wv);
            return mul(sum(sigmoid(matmul(v, t.constant(x)))), net(t, v)).value()[0];
        },
        w1, 1e-5);
    const auto an = tape.grad(w);
    for (std::size_t i = 0; i < an.size(); ++i) EXPECT_LT(relative_error(an[i], fd[i]), 1e-6);
}

// Every differentiable op, twenty seeds each.
class OpGradientProperty : public ::testing::TestWithParam<int> {};

TEST_P(OpGradientProperty, AllOpsWithinTolerance) {
    SplitMix64 rng(1000 + static_cast<std::uint64_t>(GetParam()));
    const auto w23 = random_tensor(rng, {2, 3});
    const auto w234 = random_tensor(rng, {2, 3, 4});
    std::vector<std::pair<const char*, double>> errs;
    auto check = [&](const char* name, const stsa::test::GraphFn& f, std::vector<Tensor<double>> in) {
        errs.emplace_back(name, grad_check(f, std::move(in)));
    };
    check("matmul", [&](Tape<double>&, auto& v) { return weighted_sum(matmul(v[0], v[1]), w23); },
          {random_tensor(rng, {2, 5}), random_tensor(rng, {5, 3})});
    check("softmax", [&](Tape<double>&, auto& v) { return weighted_sum(softmax_lastdim(v[0]), w234); },
          {random_tensor(rng, {2, 3, 4}, -2, 2)});
    check("layer_norm", [&](Tape<double>&, auto& v) { return weighted_sum(layer_norm(v[0], v[1], v[2], {1, 2}), w234); },
          {random_tensor(rng, {2, 3, 4}), random_tensor(rng, {3, 4}), random_tensor(rng, {3, 4})});
    check("sigmoid", [&](Tape<double>&, auto& v) { return weighted_sum(sigmoid(v[0]), w234); },
          {random_tensor(rng, {2, 3, 4}, -3, 3)});
    check("add", [&](Tape<double>&, auto& v) { return weighted_sum(mul(add(v[0], v[1]), add(v[0], v[1])), w234); },
          {random_tensor(rng, {2, 3, 4}), random_tensor(rng, {2, 1, 4})});
    check("divide", [&](Tape<double>&, auto& v) { return weighted_sum(divide(v[0], v[1]), w234); },
          {random_tensor(rng, {2, 3, 4}), random_tensor(rng, {1, 3, 1}, 0.5, 2.0)});
    check("scale", [&](Tape<double>&, auto& v) { return weighted_sum(scale(v[0], -1.7), w234); },
          {random_tensor(rng, {2, 3, 4})});
    check("permute", [&](Tape<double>&, auto& v) {
        return weighted_sum(permute(v[0], {2, 0, 1}), w234.reshaped({4, 2, 3}));
    }, {random_tensor(rng, {2, 3, 4})});
    check("concat_slice", [&](Tape<double>&, auto& v) {
        auto c = concat(std::vector<Var<double>>{v[0], v[1]}, 1);
        return weighted_sum(slice(c, 1, 1, 3), w234.reshaped({2, 3, 4}));
    }, {random_tensor(rng, {2, 2, 4}), random_tensor(rng, {2, 2, 4})});
    check("transpose_mean", [&](Tape<double>&, auto& v) { return mean(mul(transpose(v[0]), transpose(v[0]))); },
          {random_tensor(rng, {3, 5})});
    for (const auto& [name, e] : errs) EXPECT_LT(e, 1e-3) << name;
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradientProperty, ::testing::Range(0, 20));

TEST(SoftmaxProperty, RowStochasticOverSeeds) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        SplitMix64 rng(seed);
        Tape<double> tape;
        auto s = softmax_lastdim(tape.constant(random_tensor(rng, {4, 7}, -20, 20)));
        for (std::size_t r = 0; r < 4; ++r) {
            double sum = 0.0;
            for (std::size_t c = 0; c < 7; ++c) {
                ASSERT_GE(s.value().at({r, c}), 0.0);
                sum += s.value().at({r, c});
            }
            ASSERT_NEAR(sum, 1.0, 1e-6);
        }
    }
}

TEST(Determinism, RepeatedEvaluationIsBitIdentical) {
    SplitMix64 rng(14);
    const auto a = random_tensor(rng, {17, 33});
    const auto b = random_tensor(rng, {33, 9});
    Tape<double> t1, t2;
    EXPECT_EQ(matmul(t1.constant(a), t1.constant(b)).value().values(),
              matmul(t2.constant(a), t2.constant(b)).value().values());
}
