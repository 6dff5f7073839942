#pragma once

// Oracles and helpers shared by the unit tests. Everything here is written
// independently of the library code it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "stsa/ops.hpp"
#include "stsa/parameter_store.hpp"
#include "stsa/rng.hpp"
#include "stsa/tape.hpp"
#include "stsa/tensor.hpp"

namespace stsa::test {

inline Tensor<double> random_tensor(SplitMix64& rng, const Shape& shape, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(shape);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

inline Tensor<double> random_density(SplitMix64& rng, const Shape& shape) {
    Tensor<double> t = random_tensor(rng, shape, 0.05, 1.0);
    double s = 0.0;
    for (double v : t.data()) s += v;
    for (auto& v : t.data()) v /= s;
    return t;
}

inline double rel_err(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

using GraphFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

// Scalar value of the graph for the given inputs.
inline double eval_graph(const GraphFn& f, const std::vector<Tensor<double>>& inputs) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& x : inputs) vars.push_back(tape.constant(x));
    return f(tape, vars).value()[0];
}

// Largest relative error between backward() and central differences over
// every element of every input.
inline double grad_check(const GraphFn& f, std::vector<Tensor<double>> inputs, double h = 1e-4) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& x : inputs) vars.push_back(tape.variable(x));
    tape.backward(f(tape, vars));
    std::vector<Tensor<double>> analytic;
    for (const auto& v : vars) analytic.push_back(tape.grad(v));

    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const double orig = inputs[k][i];
            inputs[k][i] = orig + h;
            const double fp = eval_graph(f, inputs);
            inputs[k][i] = orig - h;
            const double fm = eval_graph(f, inputs);
            inputs[k][i] = orig;
            worst = std::max(worst, rel_err(analytic[k][i], (fp - fm) / (2.0 * h)));
        }
    }
    return worst;
}

// sum(x * w): a scalar probe that weights every output element differently.
inline Var<double> weighted_sum(const Var<double>& x, const Tensor<double>& w) {
    return sum(mul(x, x.tape().constant(w.reshaped(x.shape()))));
}

using StoreLoss = std::function<Var<double>(Tape<double>&, ParameterStore<double>&)>;

// Same comparison over every scalar of every store entry.
inline double store_grad_check(ParameterStore<double>& store, const StoreLoss& loss, double h = 1e-4) {
    store.zero_grad();
    {
        Tape<double> tape;
        tape.backward(loss(tape, store));
    }
    double worst = 0.0;
    for (auto& [name, p] : store.entries()) {
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double orig = p.value[i];
            p.value[i] = orig + h;
            Tape<double> t1;
            const double fp = loss(t1, store).value()[0];
            p.value[i] = orig - h;
            Tape<double> t2;
            const double fm = loss(t2, store).value()[0];
            p.value[i] = orig;
            worst = std::max(worst, rel_err(p.grad[i], (fp - fm) / (2.0 * h)));
        }
    }
    store.zero_grad();
    return worst;
}

}  // namespace stsa::test
