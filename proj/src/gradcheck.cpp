#include "stsa/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "stsa/fusion.hpp"
#include "stsa/model.hpp"
#include "stsa/saliency.hpp"
#include "stsa/self_attention.hpp"

namespace stsa {

template <typename T>
Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x, T h) {
    if (!(h > T{0})) throw ContractError("finite_diff_grad: step must be positive");
    Tensor<T> g(x.shape());
    Tensor<T> probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + h;
        const T fp = f(probe);
        probe[i] = x[i] - h;
        const T fm = f(probe);
        probe[i] = x[i];
        g[i] = (fp - fm) / (T{2} * h);
    }
    return g;
}

double relative_error(double a, double b, double floor) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

GradCheckResult check_store_gradients(const std::string& name, ParameterStore<double>& store,
                                      const LossBuilder& loss, double h, std::size_t max_per_entry,
                                      std::uint64_t seed) {
    store.zero_grad();
    {
        Tape<double> tape;
        tape.backward(loss(tape, store));
    }
    auto eval = [&] {
        Tape<double> tape(false);
        return loss(tape, store).value()[0];
    };
    GradCheckResult r;
    r.name = name;
    SplitMix64 rng(seed);
    for (auto& [entry, p] : store.entries()) {
        std::vector<std::size_t> picks(p.value.size());
        for (std::size_t i = 0; i < picks.size(); ++i) picks[i] = i;
        if (max_per_entry > 0 && picks.size() > max_per_entry) {
            for (std::size_t i = 0; i < max_per_entry; ++i) {
                std::swap(picks[i], picks[i + rng.below(picks.size() - i)]);
            }
            picks.resize(max_per_entry);
        }
        for (std::size_t i : picks) {
            const double orig = p.value[i];
            auto central = [&](double step) {
                p.value[i] = orig + step;
                const double fp = eval();
                p.value[i] = orig - step;
                const double fm = eval();
                p.value[i] = orig;
                return relative_error(p.grad[i], (fp - fm) / (2.0 * step));
            };
            const double raw = central(h);
            double err = raw;
            if (raw >= kGradTolerance) {
                ++r.refined;
                for (double step : {h / 10.0, h / 100.0}) {
                    err = std::min(err, central(step));
                    if (err < kGradTolerance) break;
                }
            }
            ++r.checked;
            r.max_raw_error = std::max(r.max_raw_error, raw);
            if (r.worst.empty() || err > r.max_rel_error) {
                r.max_rel_error = err;
                r.worst = entry + "[" + std::to_string(i) + "]";
            }
        }
    }
    store.zero_grad();
    return r;
}

namespace {

Tensor<double> random_tensor(SplitMix64& rng, const Shape& shape, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(shape);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

// sum(out * R) with a fixed random R, so every output element matters.
Var<double> probe_loss(const Var<double>& out, const Tensor<double>& weights) {
    Var<double> w = out.tape().constant(weights);
    return sum(mul(out, w));
}

struct Case {
    std::string name;
    std::shared_ptr<ParameterStore<double>> store;
    LossBuilder loss;
};

Case layer_case(const std::string& name, std::size_t channels, AttentionPattern pattern,
                bool bottleneck, std::uint64_t seed) {
    SplitMix64 rng(seed);
    auto layer = std::make_shared<StsaLayer>("layer", channels, pattern, bottleneck, false);
    auto store = std::make_shared<ParameterStore<double>>();
    layer->init(*store, rng);
    // move the affine parameters off their identity start so they are exercised
    for (auto* n : {&layer->norm()}) {
        store->value(n->gamma_name()) = random_tensor(rng, {channels}, 0.5, 1.5);
        store->value(n->beta_name()) = random_tensor(rng, {channels}, -0.5, 0.5);
    }
    const Shape in{1, channels, 4, 4, 4};
    store->add("input", random_tensor(rng, in));
    const Tensor<double> weights = random_tensor(rng, in);
    return {name, store, [layer, weights](Tape<double>& tape, ParameterStore<double>& s) {
                return probe_loss(layer->forward(tape, s, tape.parameter(s, "input")), weights);
            }};
}

Case module_case(std::uint64_t seed) {
    SplitMix64 rng(seed);
    StsaConfig cfg;
    cfg.channels = 8;
    auto module = std::make_shared<StsaModule>("module", cfg);
    auto store = std::make_shared<ParameterStore<double>>();
    module->init(*store, rng);
    store->add("input", random_tensor(rng, {1, 8, 4, 4, 4}));
    const Tensor<double> weights = random_tensor(rng, {1, 4, 4, 4, 4});
    return {"attention.module", store, [module, weights](Tape<double>& tape, ParameterStore<double>& s) {
                return probe_loss(module->forward(tape, s, tape.parameter(s, "input")), weights);
            }};
}

Case fusion_case(const std::string& name, FusionMode mode, bool relu_first, std::uint64_t seed) {
    SplitMix64 rng(seed);
    AmsfConfig cfg;
    cfg.deep_channels = 8;
    cfg.channels = 4;
    cfg.fusion = mode;
    cfg.relu_before_norm = relu_first;
    auto stage = std::make_shared<AmsfStage>("fuse", cfg);
    auto store = std::make_shared<ParameterStore<double>>();
    stage->init(*store, rng);
    store->add("deep", random_tensor(rng, {1, 8, 4, 2, 2}));
    store->add("shallow", random_tensor(rng, {1, 4, 4, 4, 4}));
    const Tensor<double> weights = random_tensor(rng, {1, 4, 4, 4, 4});
    return {name, store, [stage, weights](Tape<double>& tape, ParameterStore<double>& s) {
                return probe_loss(stage->forward(tape, s, tape.parameter(s, "deep"),
                                                 tape.parameter(s, "shallow")),
                                  weights);
            }};
}

Case loss_case(std::uint64_t seed) {
    SplitMix64 rng(seed);
    auto store = std::make_shared<ParameterStore<double>>();
    Tensor<double> s = random_tensor(rng, {5, 6}, 0.1, 1.0);
    Tensor<double> g = random_tensor(rng, {5, 6}, 0.0, 1.0);
    double sg = 0.0, ss = 0.0;
    for (double v : g.data()) sg += v;
    for (double v : s.data()) ss += v;
    for (auto& v : g.data()) v /= sg;
    for (auto& v : s.data()) v /= ss;
    store->add("prediction", s);
    return {"loss.kl_minus_cc", store, [g](Tape<double>& tape, ParameterStore<double>& st) {
                return loss_total(tape.parameter(st, "prediction"), g);
            }};
}

Case micro_model_case(std::uint64_t seed) {
    SplitMix64 rng(seed);
    ModelConfig cfg = ModelConfig::micro_config();
    cfg.seed = seed;
    auto net = std::make_shared<StsaNet>(cfg);
    auto store = std::make_shared<ParameterStore<double>>(net->make_parameters<double>());
    const Tensor<double> clip = random_tensor(rng, {cfg.t_in, 3, cfg.height, cfg.width}, 0.0, 1.0);
    Tensor<double> g = random_tensor(rng, {cfg.height, cfg.width}, 0.0, 1.0);
    double total = 0.0;
    for (double v : g.data()) total += v;
    for (auto& v : g.data()) v /= total;
    return {"model.micro", store, [net, clip, g](Tape<double>& tape, ParameterStore<double>& s) {
                return loss_total(net->forward(tape, s, clip), g);
            }};
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckSuiteOptions& options) {
    std::vector<Case> cases;
    const std::uint64_t s = options.seed;
    cases.push_back(layer_case("attention.layer1", 4, AttentionPattern::pairwise_frames, false, s + 1));
    cases.push_back(layer_case("attention.layer2", 4, AttentionPattern::pairwise_halves, false, s + 2));
    cases.push_back(layer_case("attention.bottleneck", 4, AttentionPattern::pairwise_frames, true, s + 3));
    cases.push_back(layer_case("attention.no_temporal", 4, AttentionPattern::per_frame, false, s + 4));
    cases.push_back(layer_case("attention.single_similarity", 4, AttentionPattern::whole_clip, false, s + 5));
    cases.push_back(module_case(s + 6));
    cases.push_back(fusion_case("fusion.addition", FusionMode::addition, false, s + 7));
    cases.push_back(fusion_case("fusion.concatenation", FusionMode::concatenation, false, s + 8));
    cases.push_back(fusion_case("fusion.relu_before_norm", FusionMode::addition, true, s + 9));
    cases.push_back(loss_case(s + 10));
    if (options.micro) cases.push_back(micro_model_case(s + 11));

    std::vector<GradCheckResult> results;
    for (auto& c : cases) {
        results.push_back(check_store_gradients(c.name, *c.store, c.loss, options.h));
        if (options.progress) {
            const auto& r = results.back();
            *options.progress << r.name << ": " << r.checked << " checked\n" << std::flush;
        }
    }
    return results;
}

#define STSA_INSTANTIATE(T)                                                                    \
    template Tensor<T> finite_diff_grad<T>(const std::function<T(const Tensor<T>&)>&, const Tensor<T>&, T);

STSA_INSTANTIATE(float)
STSA_INSTANTIATE(double)

}  // namespace stsa
