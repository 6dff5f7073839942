#include "stsa/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "stsa/ops.hpp"

namespace stsa {

namespace {

void require_map(const Shape& s, const char* where) {
    if (s.size() != 2) {
        throw DimensionError(std::string(where) + " expects an (H,W) map, got " + to_string(s));
    }
}

void require_same(const Shape& a, const Shape& b, const char* where) {
    if (a != b) {
        throw DimensionError(std::string(where) + ": map shapes differ, " + to_string(a) + " vs " +
                             to_string(b));
    }
}

struct Moments {
    double mean = 0.0;
    double sd = 0.0;
};

template <typename T>
Moments moments(const T* x, std::size_t n, const char* which) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += x[i];
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    double peak = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = x[i] - mean;
        ss += d * d;
        peak = std::max(peak, std::abs(static_cast<double>(x[i])));
    }
    const double sd = std::sqrt(ss / static_cast<double>(n));
    if (!(sd > 1e-12 * std::max(1.0, peak))) {
        throw DegenerateMapError(std::string("degenerate map: ") + which +
                                 " has zero standard deviation");
    }
    return {mean, sd};
}

std::vector<double> values_at(const Tensor<double>& s, const std::vector<FixationPoint>& pts) {
    std::vector<double> out;
    out.reserve(pts.size());
    const std::size_t w = s.shape()[1];
    for (const auto& p : pts) out.push_back(s[p.y * w + p.x]);
    return out;
}

}  // namespace

void LossConfig::validate() const {
    if (!(epsilon > 0.0)) throw ConfigError("loss epsilon must be positive");
}

void SaliencyMap::validate() const {
    require_map(grid.shape(), "saliency map");
    double sum = 0.0;
    for (double v : grid.data()) {
        if (v < 0.0) throw ContractError("saliency map has a negative entry");
        sum += v;
    }
    if (normalized && std::abs(sum - 1.0) > 1e-6) {
        throw ContractError("saliency map flagged normalized but sums to " + std::to_string(sum));
    }
}

std::vector<FixationPoint> unique_points(const std::vector<FixationPoint>& points, std::size_t height,
                                         std::size_t width) {
    std::vector<FixationPoint> out;
    out.reserve(points.size());
    for (const auto& p : points) {
        if (p.x >= width || p.y >= height) {
            throw ContractError("fixation (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                                ") outside a " + std::to_string(width) + "x" +
                                std::to_string(height) + " map");
        }
        out.push_back(p);
    }
    std::sort(out.begin(), out.end(),
              [](const FixationPoint& a, const FixationPoint& b) {
                  return a.y != b.y ? a.y < b.y : a.x < b.x;
              });
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

Tensor<double> normalize_map(const Tensor<double>& map) {
    double sum = 0.0;
    for (double v : map.data()) {
        if (v < 0.0) throw ContractError("cannot normalise a map with negative entries");
        sum += v;
    }
    if (!(sum > 0.0)) throw DegenerateMapError("degenerate map: sums to zero");
    Tensor<double> out = map;
    for (auto& v : out.data()) v /= sum;
    return out;
}

template <typename T>
Var<T> loss_kl(const Var<T>& s, const Tensor<T>& g, const LossConfig& cfg) {
    cfg.validate();
    require_map(s.shape(), "loss_kl");
    require_same(s.shape(), g.shape(), "loss_kl");
    const double eps = cfg.epsilon;
    const T* sp = s.value().raw();
    const T* gp = g.raw();
    const std::size_t n = g.size();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double gi = gp[i];
        total += gi * std::log(eps + gi / (eps + static_cast<double>(sp[i])));
    }
    return s.tape().record(
        Tensor<T>(Shape{1}, static_cast<T>(total)), {s},
        [sid = s.id(), g, eps](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& grad) {
            Tensor<T>* gs = tape.grad_slot(sid);
            if (!gs) return;
            const T* sv = tape.value(sid).raw();
            const double up = grad[0];
            for (std::size_t i = 0, m = g.size(); i < m; ++i) {
                const double gi = g[i];
                const double d = eps + static_cast<double>(sv[i]);
                const double ratio = gi / d;
                (*gs)[i] += static_cast<T>(up * gi / (eps + ratio) * (-ratio / d));
            }
        },
        "loss_kl");
}

template <typename T>
Var<T> loss_cc(const Var<T>& s, const Tensor<T>& g) {
    require_map(s.shape(), "loss_cc");
    require_same(s.shape(), g.shape(), "loss_cc");
    const std::size_t n = g.size();
    const Moments ms = moments(s.value().raw(), n, "prediction");
    const Moments mg = moments(g.raw(), n, "ground truth");
    double cov = 0.0;
    for (std::size_t i = 0; i < n; ++i) cov += (s.value()[i] - ms.mean) * (g[i] - mg.mean);
    cov /= static_cast<double>(n);
    const double cc = cov / (ms.sd * mg.sd);
    return s.tape().record(
        Tensor<T>(Shape{1}, static_cast<T>(cc)), {s},
        [sid = s.id(), g, ms, mg, cc, n](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& grad) {
            Tensor<T>* gs = tape.grad_slot(sid);
            if (!gs) return;
            const Tensor<T>& sv = tape.value(sid);
            const double up = grad[0] / static_cast<double>(n);
            const double var_s = ms.sd * ms.sd;
            for (std::size_t i = 0; i < n; ++i) {
                const double a = sv[i] - ms.mean;
                const double b = g[i] - mg.mean;
                (*gs)[i] += static_cast<T>(up * (b / (ms.sd * mg.sd) - cc * a / var_s));
            }
        },
        "loss_cc");
}

template <typename T>
Var<T> loss_total(const Var<T>& s, const Tensor<T>& g, const LossConfig& cfg) {
    Var<T> kl = loss_kl(s, g, cfg);
    Var<T> cc = loss_cc(s, g);
    return add(kl, scale(cc, T{-1}));
}

double metric_cc(const Tensor<double>& s, const Tensor<double>& g) {
    require_map(s.shape(), "metric_cc");
    require_same(s.shape(), g.shape(), "metric_cc");
    const std::size_t n = s.size();
    const Moments ms = moments(s.raw(), n, "prediction");
    const Moments mg = moments(g.raw(), n, "ground truth");
    double cov = 0.0;
    for (std::size_t i = 0; i < n; ++i) cov += (s[i] - ms.mean) * (g[i] - mg.mean);
    return cov / static_cast<double>(n) / (ms.sd * mg.sd);
}

double metric_kl(const Tensor<double>& s, const Tensor<double>& g, const LossConfig& cfg) {
    cfg.validate();
    require_map(s.shape(), "metric_kl");
    require_same(s.shape(), g.shape(), "metric_kl");
    const Tensor<double> sn = normalize_map(s);
    const Tensor<double> gn = normalize_map(g);
    double total = 0.0;
    for (std::size_t i = 0, n = sn.size(); i < n; ++i) {
        total += gn[i] * std::log(cfg.epsilon + gn[i] / (cfg.epsilon + sn[i]));
    }
    return total;
}

double metric_sim(const Tensor<double>& s, const Tensor<double>& g) {
    require_map(s.shape(), "metric_sim");
    require_same(s.shape(), g.shape(), "metric_sim");
    const Tensor<double> sn = normalize_map(s);
    const Tensor<double> gn = normalize_map(g);
    double total = 0.0;
    for (std::size_t i = 0, n = sn.size(); i < n; ++i) total += std::min(sn[i], gn[i]);
    return total;
}

double metric_nss(const Tensor<double>& s, const std::vector<FixationPoint>& fixations) {
    require_map(s.shape(), "metric_nss");
    const auto pts = unique_points(fixations, s.shape()[0], s.shape()[1]);
    if (pts.empty()) throw ContractError("metric_nss: no fixation points");
    const Moments m = moments(s.raw(), s.size(), "prediction");
    double total = 0.0;
    for (double v : values_at(s, pts)) total += (v - m.mean) / m.sd;
    return total / static_cast<double>(pts.size());
}

double rank_auc(std::vector<double> positives, std::vector<double> negatives) {
    if (positives.empty() || negatives.empty()) {
        throw ContractError("AUC needs at least one positive and one negative");
    }
    std::sort(positives.begin(), positives.end());
    // twice the count of (greater + half ties), kept as an exact integer
    std::uint64_t twice = 0;
    for (double v : negatives) {
        const auto lo = std::lower_bound(positives.begin(), positives.end(), v);
        const auto hi = std::upper_bound(lo, positives.end(), v);
        const auto greater = static_cast<std::uint64_t>(positives.end() - hi);
        const auto ties = static_cast<std::uint64_t>(hi - lo);
        twice += 2 * greater + ties;
    }
    const double pairs = static_cast<double>(positives.size()) * static_cast<double>(negatives.size());
    return static_cast<double>(twice) / (2.0 * pairs);
}

double metric_auc_judd(const Tensor<double>& s, const std::vector<FixationPoint>& fixations) {
    require_map(s.shape(), "metric_auc_judd");
    if (s.size() < 2) throw ContractError("metric_auc_judd: map needs at least 2 cells");
    const auto pts = unique_points(fixations, s.shape()[0], s.shape()[1]);
    if (pts.empty()) throw ContractError("metric_auc_judd: no fixation points");
    std::vector<bool> fixated(s.size(), false);
    const std::size_t w = s.shape()[1];
    for (const auto& p : pts) fixated[p.y * w + p.x] = true;
    std::vector<double> negatives;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!fixated[i]) negatives.push_back(s[i]);
    }
    if (negatives.empty()) throw ContractError("metric_auc_judd: every cell is fixated");
    return rank_auc(values_at(s, pts), std::move(negatives));
}

double metric_sauc(const Tensor<double>& s, const std::vector<FixationPoint>& fixations,
                   const std::vector<FixationPoint>& shuffle_negatives) {
    require_map(s.shape(), "metric_sauc");
    const auto pts = unique_points(fixations, s.shape()[0], s.shape()[1]);
    const auto neg = unique_points(shuffle_negatives, s.shape()[0], s.shape()[1]);
    if (pts.empty()) throw ContractError("metric_sauc: no fixation points");
    if (neg.empty()) throw ContractError("metric_sauc: empty shuffle set");
    return rank_auc(values_at(s, pts), values_at(s, neg));
}

#define STSA_INSTANTIATE(T)                                                                \
    template Var<T> loss_kl<T>(const Var<T>&, const Tensor<T>&, const LossConfig&);       \
    template Var<T> loss_cc<T>(const Var<T>&, const Tensor<T>&);                          \
    template Var<T> loss_total<T>(const Var<T>&, const Tensor<T>&, const LossConfig&);

STSA_INSTANTIATE(float)
STSA_INSTANTIATE(double)

}  // namespace stsa
