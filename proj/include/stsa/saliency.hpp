#pragma once

#include <compare>
#include <cstddef>
#include <vector>

#include "stsa/tape.hpp"
#include "stsa/tensor.hpp"

namespace stsa {

struct LossConfig {
    double epsilon = 1e-7;
    void validate() const;
};

/// Integer fixation coordinate: x is the column, y the row.
struct FixationPoint {
    std::size_t x = 0;
    std::size_t y = 0;
    auto operator<=>(const FixationPoint&) const = default;
};

/// An (H,W) non-negative map; `normalized` records that it sums to 1.
struct SaliencyMap {
    Tensor<double> grid{Shape{1, 1}};
    bool normalized = false;

    /// Checks rank 2, non-negativity and, when flagged, the unit sum.
    void validate() const;
};

struct FixationData {
    SaliencyMap density;
    std::vector<FixationPoint> points;
};

/// Sorted, deduplicated copy; throws ContractError for points outside (H,W).
std::vector<FixationPoint> unique_points(const std::vector<FixationPoint>& points, std::size_t height,
                                         std::size_t width);

/// Scales a non-negative map to unit sum. DegenerateMapError on a zero map,
/// ContractError on negative entries.
Tensor<double> normalize_map(const Tensor<double>& map);

// Differentiable losses of a predicted map S (a tape value) against a fixed G.

/// sum_i G_i log(eps + G_i / (eps + S_i)).
template <typename T>
Var<T> loss_kl(const Var<T>& s, const Tensor<T>& g, const LossConfig& cfg = {});

/// Pearson correlation with population standard deviations.
template <typename T>
Var<T> loss_cc(const Var<T>& s, const Tensor<T>& g);

/// KL(S,G) - CC(S,G).
template <typename T>
Var<T> loss_total(const Var<T>& s, const Tensor<T>& g, const LossConfig& cfg = {});

// Evaluation metrics. Inputs are (H,W) maps; KL and SIM normalise both maps
// to unit sum first.

double metric_cc(const Tensor<double>& s, const Tensor<double>& g);
double metric_kl(const Tensor<double>& s, const Tensor<double>& g, const LossConfig& cfg = {});
double metric_sim(const Tensor<double>& s, const Tensor<double>& g);
double metric_nss(const Tensor<double>& s, const std::vector<FixationPoint>& fixations);

/// Area under the full ROC with fixated cells as positives and every other
/// cell as a negative. Each threshold classifies cells with saliency >= the
/// threshold as positive, which gives P(pos > neg) + P(pos == neg) / 2.
double metric_auc_judd(const Tensor<double>& s, const std::vector<FixationPoint>& fixations);

/// Same area with negatives taken from `shuffle_negatives` (fixations of
/// other clips) instead of the non-fixated cells.
double metric_sauc(const Tensor<double>& s, const std::vector<FixationPoint>& fixations,
                   const std::vector<FixationPoint>& shuffle_negatives);

/// Exact P(a > b) + P(a == b) / 2 over all pairs, via sorting.
double rank_auc(std::vector<double> positives, std::vector<double> negatives);

}  // namespace stsa
