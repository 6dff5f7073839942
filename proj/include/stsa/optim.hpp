#pragma once

#include <cstddef>

#include "stsa/parameter_store.hpp"

namespace stsa {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam update of every entry, then the gradients are zeroed.
template <typename T>
void adam_step(ParameterStore<T>& store, const AdamConfig& cfg);

/// Divides the learning rate by 10 when an exponential moving average of the
/// loss improves by less than `min_rel_improvement` over `window` steps; at
/// most `max_decays` times. The first window only sets the reference.
class PlateauSchedule {
public:
    struct State {
        double lr = 1e-4;
        double smoothed = 0.0;
        double reference = 0.0;
        std::size_t steps_in_window = 0;
        std::size_t decays = 0;
        std::size_t observed = 0;
    };

    explicit PlateauSchedule(double initial_lr) { state_.lr = initial_lr; }

    /// Feeds one training loss; returns the learning rate for the next step.
    double observe(double loss);

    double lr() const noexcept { return state_.lr; }
    const State& state() const noexcept { return state_; }
    void restore(const State& s) { state_ = s; }

    static constexpr double kSmoothing = 0.05;
    static constexpr std::size_t kWindow = 200;
    static constexpr double kMinRelImprovement = 1e-3;
    static constexpr std::size_t kMaxDecays = 2;

private:
    State state_;
};

}  // namespace stsa
