#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "stsa/parameter_store.hpp"
#include "stsa/tape.hpp"

namespace stsa {

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every element.
template <typename T>
Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x, T h);

/// |a - b| / max(|a|, |b|, floor).
double relative_error(double a, double b, double floor = 1e-6);

/// Builds a scalar loss from parameters. Called once with gradients enabled
/// and then repeatedly on inference tapes for the perturbed evaluations.
using LossBuilder = std::function<Var<double>(Tape<double>&, ParameterStore<double>&)>;

struct GradCheckResult {
    std::string name;
    double max_rel_error = 0.0;  // accepted error, after kink refinement
    double max_raw_error = 0.0;  // at the nominal step only
    std::size_t checked = 0;
    std::size_t refined = 0;     // coordinates that needed a smaller step
    std::string worst;           // entry[index] with the largest accepted error
};

inline constexpr double kGradTolerance = 1e-3;

/// Compares backward() against central differences for every scalar of every
/// entry in the store (or `max_per_entry` seeded picks when non-zero).
/// ReLU, max-pool and unpool make the loss piecewise smooth, so a step of h
/// can straddle a kink. A coordinate above tolerance at h is re-differenced
/// at h/10 and h/100; its accepted error is the first one under tolerance,
/// else the smallest seen.
GradCheckResult check_store_gradients(const std::string& name, ParameterStore<double>& store,
                                      const LossBuilder& loss, double h = 1e-4,
                                      std::size_t max_per_entry = 0, std::uint64_t seed = 0);

struct GradCheckSuiteOptions {
    bool micro = true;        // include the whole micro model
    double h = 1e-4;
    std::uint64_t seed = 11;
    std::ostream* progress = nullptr;
};

/// Module-level checks (attention layers, variants, bottleneck, fusion stage,
/// loss) plus, in micro mode, the full micro model. Inputs are checked as
/// well as parameters.
std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckSuiteOptions& options);

}  // namespace stsa
