#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "stsa/tape.hpp"
#include "stsa/tensor.hpp"

namespace stsa {

/// Extents in (time, height, width) order.
using Triple = std::array<std::size_t, 3>;

/// Geometry of a 3D convolution. Kernel notation is time x height x width.
struct ConvSpec {
    std::size_t out_channels = 1;
    Triple kernel{1, 1, 1};
    Triple stride{1, 1, 1};
    Triple padding{0, 0, 0};
    bool bias = true;

    void validate() const;
};

/// floor((in + 2 pad - kernel) / stride) + 1, or 0 when the window does not fit.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t pad);

/// Output shape of conv3d on an (N, C, T, H, W) input. Throws DimensionError
/// naming the axis whose output extent would be non-positive.
Shape conv3d_output_shape(const Shape& input, const ConvSpec& spec);

/// 3D cross-correlation (no kernel flip) of x (N, Cin, T, H, W) with
/// weights (Cout, Cin, kT, kH, kW). bias, when given, has shape (Cout).
template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& weight, const Var<T>* bias, const Triple& stride,
              const Triple& padding);

/// Flat source offset (into the pooled input) of the maximum of each window.
struct PoolIndices {
    Shape shape;         // shape of the pooled output
    Shape input_shape;   // shape of the tensor that was pooled
    std::vector<std::size_t> source;
};

template <typename T>
struct PoolResult {
    Var<T> output;
    PoolIndices indices;
};

/// Max pooling without padding. Ties resolve to the lowest flat index.
template <typename T>
PoolResult<T> maxpool3d(const Var<T>& x, const Triple& kernel, const Triple& stride);

/// Scatters x to the positions recorded in idx; everything else is zero.
template <typename T>
Var<T> maxunpool3d(const Var<T>& x, const PoolIndices& idx, const Shape& out_shape);

/// Average pooling. Padded cells are excluded from the divisor, so a constant
/// input stays constant at the borders.
template <typename T>
Var<T> avgpool3d(const Var<T>& x, const Triple& kernel, const Triple& stride,
                 const Triple& padding);

/// Mean over (H, W) for every (n, c, t): output (N, C, T, 1, 1).
template <typename T>
Var<T> global_avg_pool_spatial(const Var<T>& x);

/// Trilinear resize with the align-corners=false convention. Identity when
/// the target equals the source extents.
template <typename T>
Var<T> upsample_trilinear(const Var<T>& x, const Triple& target);

}  // namespace stsa
