#include "stsa/optim.hpp"

#include <cmath>

namespace stsa {

template <typename T>
void adam_step(ParameterStore<T>& store, const AdamConfig& cfg) {
    const T b1 = static_cast<T>(cfg.beta1);
    const T b2 = static_cast<T>(cfg.beta2);
    for (auto& [name, p] : store.entries()) {
        ++p.step;
        const double t = static_cast<double>(p.step);
        const T c1 = static_cast<T>(1.0 - std::pow(cfg.beta1, t));
        const T c2 = static_cast<T>(1.0 - std::pow(cfg.beta2, t));
        const T lr = static_cast<T>(cfg.lr);
        const T eps = static_cast<T>(cfg.eps);
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const T g = p.grad[i];
            p.adam_m[i] = b1 * p.adam_m[i] + (T{1} - b1) * g;
            p.adam_v[i] = b2 * p.adam_v[i] + (T{1} - b2) * g * g;
            const T m_hat = p.adam_m[i] / c1;
            const T v_hat = p.adam_v[i] / c2;
            p.value[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
            p.grad[i] = T{0};
        }
    }
}

double PlateauSchedule::observe(double loss) {
    State& s = state_;
    if (s.observed == 0) {
        s.smoothed = loss;
        s.reference = loss;
    } else {
        s.smoothed = (1.0 - kSmoothing) * s.smoothed + kSmoothing * loss;
    }
    ++s.observed;
    if (++s.steps_in_window >= kWindow) {
        // The first window only warms up the average; its start value is a
        // single raw loss and too noisy to serve as a reference.
        const bool warmup = s.observed == kWindow;
        const double improvement = s.reference - s.smoothed;
        if (!warmup && s.decays < kMaxDecays &&
            improvement < kMinRelImprovement * std::abs(s.reference)) {
            s.lr /= 10.0;
            ++s.decays;
        }
        s.reference = s.smoothed;
        s.steps_in_window = 0;
    }
    return s.lr;
}

template void adam_step<float>(ParameterStore<float>&, const AdamConfig&);
template void adam_step<double>(ParameterStore<double>&, const AdamConfig&);

}  // namespace stsa
