#include "stsa/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "stsa/ops.hpp"

namespace stsa {

namespace {

const char* kAxisNames[3] = {"time", "height", "width"};

void require_rank5(const Shape& s, const char* op) {
    if (s.size() != 5) {
        throw DimensionError(std::string(op) + " expects an (N,C,T,H,W) tensor, got " +
                             to_string(s));
    }
}

/// Convolution geometry resolved against one input.
struct ConvGeometry {
    std::size_t n, cin, t, h, w;
    std::size_t cout, kt, kh, kw;
    std::size_t ot, oh, ow;
    Triple stride, pad;

    std::size_t patch() const { return cin * kt * kh * kw; }
    std::size_t out_positions() const { return ot * oh * ow; }
    std::size_t in_volume() const { return t * h * w; }
    bool pointwise() const {
        return kt == 1 && kh == 1 && kw == 1 && stride == Triple{1, 1, 1} && pad == Triple{0, 0, 0};
    }
};

// im2col: columns laid out as (cin, kt, kh, kw) rows x (ot, oh, ow) columns.
template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
    const std::size_t cols = g.out_positions();
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.cin; ++c) {
        const T* xc = x + c * g.in_volume();
        for (std::size_t a = 0; a < g.kt; ++a) {
            for (std::size_t b = 0; b < g.kh; ++b) {
                for (std::size_t d = 0; d < g.kw; ++d, ++row) {
                    T* dst = col + row * cols;
                    for (std::size_t ot = 0; ot < g.ot; ++ot) {
                        const long it = static_cast<long>(ot * g.stride[0] + a) - static_cast<long>(g.pad[0]);
                        for (std::size_t oh = 0; oh < g.oh; ++oh) {
                            const long ih = static_cast<long>(oh * g.stride[1] + b) - static_cast<long>(g.pad[1]);
                            T* out = dst + (ot * g.oh + oh) * g.ow;
                            if (it < 0 || it >= static_cast<long>(g.t) || ih < 0 ||
                                ih >= static_cast<long>(g.h)) {
                                std::fill_n(out, g.ow, T{0});
                                continue;
                            }
                            const T* src = xc + (static_cast<std::size_t>(it) * g.h + static_cast<std::size_t>(ih)) * g.w;
                            for (std::size_t ow = 0; ow < g.ow; ++ow) {
                                const long iw = static_cast<long>(ow * g.stride[2] + d) - static_cast<long>(g.pad[2]);
                                out[ow] = (iw < 0 || iw >= static_cast<long>(g.w)) ? T{0} : src[iw];
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* x) {
    const std::size_t cols = g.out_positions();
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.cin; ++c) {
        T* xc = x + c * g.in_volume();
        for (std::size_t a = 0; a < g.kt; ++a) {
            for (std::size_t b = 0; b < g.kh; ++b) {
                for (std::size_t d = 0; d < g.kw; ++d, ++row) {
                    const T* src = col + row * cols;
                    for (std::size_t ot = 0; ot < g.ot; ++ot) {
                        const long it = static_cast<long>(ot * g.stride[0] + a) - static_cast<long>(g.pad[0]);
                        if (it < 0 || it >= static_cast<long>(g.t)) continue;
                        for (std::size_t oh = 0; oh < g.oh; ++oh) {
                            const long ih = static_cast<long>(oh * g.stride[1] + b) - static_cast<long>(g.pad[1]);
                            if (ih < 0 || ih >= static_cast<long>(g.h)) continue;
                            const T* in = src + (ot * g.oh + oh) * g.ow;
                            T* dst = xc + (static_cast<std::size_t>(it) * g.h + static_cast<std::size_t>(ih)) * g.w;
                            for (std::size_t ow = 0; ow < g.ow; ++ow) {
                                const long iw = static_cast<long>(ow * g.stride[2] + d) - static_cast<long>(g.pad[2]);
                                if (iw >= 0 && iw < static_cast<long>(g.w)) dst[iw] += in[ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Per-axis linear interpolation taps for align-corners=false resizing.
struct AxisTaps {
    std::vector<std::size_t> lo, hi;
    std::vector<double> frac;
};

AxisTaps make_taps(std::size_t in, std::size_t out) {
    AxisTaps taps;
    taps.lo.resize(out);
    taps.hi.resize(out);
    taps.frac.resize(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
        double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
        if (src < 0) src = 0;
        std::size_t lo = static_cast<std::size_t>(src);
        if (lo > in - 1) lo = in - 1;
        taps.lo[i] = lo;
        taps.hi[i] = std::min(lo + 1, in - 1);
        taps.frac[i] = src - static_cast<double>(lo);
    }
    return taps;
}

}  // namespace

void ConvSpec::validate() const {
    for (std::size_t i = 0; i < 3; ++i) {
        if (kernel[i] < 1) throw ConfigError("conv kernel extents must be >= 1");
        if (stride[i] < 1) throw ConfigError("conv strides must be >= 1");
        if (padding[i] >= kernel[i]) {
            throw ConfigError(std::string("conv padding must be smaller than the kernel on the ") +
                              kAxisNames[i] + " axis");
        }
    }
    if (out_channels < 1) throw ConfigError("conv must have at least one output channel");
}

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t pad) {
    if (in + 2 * pad < kernel) return 0;
    return (in + 2 * pad - kernel) / stride + 1;
}

Shape conv3d_output_shape(const Shape& input, const ConvSpec& spec) {
    require_rank5(input, "conv3d");
    Shape out{input[0], spec.out_channels, 0, 0, 0};
    for (std::size_t i = 0; i < 3; ++i) {
        out[2 + i] = conv_output_extent(input[2 + i], spec.kernel[i], spec.stride[i], spec.padding[i]);
        if (out[2 + i] < 1) {
            throw DimensionError(std::string("conv3d: non-positive output extent on the ") +
                                 kAxisNames[i] + " axis for input " + to_string(input));
        }
    }
    return out;
}

template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& weight, const Var<T>* bias, const Triple& stride,
              const Triple& padding) {
    const Shape& xs = x.shape();
    const Shape& ws = weight.shape();
    require_rank5(xs, "conv3d");
    if (ws.size() != 5) throw DimensionError("conv3d: weights must be rank 5, got " + to_string(ws));
    if (ws[1] != xs[1]) {
        throw DimensionError("conv3d: weights expect " + std::to_string(ws[1]) +
                             " input channels, input " + to_string(xs) + " has " +
                             std::to_string(xs[1]));
    }
    ConvSpec spec{ws[0], {ws[2], ws[3], ws[4]}, stride, padding, bias != nullptr};
    spec.validate();
    const Shape os = conv3d_output_shape(xs, spec);
    if (bias && bias->shape() != Shape{ws[0]}) {
        throw DimensionError("conv3d: bias must have shape (" + std::to_string(ws[0]) + ")");
    }

    const ConvGeometry g{xs[0], xs[1], xs[2], xs[3], xs[4], ws[0], ws[2], ws[3], ws[4],
                         os[2], os[3], os[4], stride, padding};
    const std::size_t P = g.out_positions();
    const std::size_t K = g.patch();
    Tensor<T> out(os);
    std::vector<T> col(g.pointwise() ? 0 : K * P);
    const T* wv = weight.value().raw();
    for (std::size_t n = 0; n < g.n; ++n) {
        const T* xn = x.value().raw() + n * g.cin * g.in_volume();
        T* on = out.raw() + n * g.cout * P;
        const T* b = xn;
        if (!g.pointwise()) {
            im2col(g, xn, col.data());
            b = col.data();
        }
        gemm<T>(false, false, g.cout, P, K, wv, b, on, false);
        if (bias) {
            const T* bv = bias->value().raw();
            for (std::size_t c = 0; c < g.cout; ++c) {
                T* row = on + c * P;
                for (std::size_t p = 0; p < P; ++p) row[p] += bv[c];
            }
        }
    }

    std::vector<Var<T>> inputs{x, weight};
    if (bias) inputs.push_back(*bias);
    const std::size_t ix = x.id(), iw = weight.id();
    const std::size_t ib = bias ? bias->id() : 0;
    const bool has_bias = bias != nullptr;
    return x.tape().record(
        std::move(out), std::move(inputs),
        [g, ix, iw, ib, has_bias](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& grad) {
            const std::size_t P = g.out_positions();
            const std::size_t K = g.patch();
            Tensor<T>* gx = tape.grad_slot(ix);
            Tensor<T>* gw = tape.grad_slot(iw);
            Tensor<T>* gb = has_bias ? tape.grad_slot(ib) : nullptr;
            const T* xv = tape.value(ix).raw();
            const T* wv = tape.value(iw).raw();
            std::vector<T> col(g.pointwise() ? 0 : K * P);
            for (std::size_t n = 0; n < g.n; ++n) {
                const T* gn = grad.raw() + n * g.cout * P;
                if (gb) {
                    for (std::size_t c = 0; c < g.cout; ++c) {
                        const T* row = gn + c * P;
                        T s = 0;
                        for (std::size_t p = 0; p < P; ++p) s += row[p];
                        (*gb)[c] += s;
                    }
                }
                if (gw) {
                    const T* xn = xv + n * g.cin * g.in_volume();
                    const T* b = xn;
                    if (!g.pointwise()) {
                        im2col(g, xn, col.data());
                        b = col.data();
                    }
                    gemm<T>(false, true, g.cout, K, P, gn, b, gw->raw(), true);
                }
                if (gx) {
                    T* xg = gx->raw() + n * g.cin * g.in_volume();
                    if (g.pointwise()) {
                        gemm<T>(true, false, K, P, g.cout, wv, gn, xg, true);
                    } else {
                        gemm<T>(true, false, K, P, g.cout, wv, gn, col.data(), false);
                        col2im(g, col.data(), xg);
                    }
                }
            }
        },
        "conv3d");
}

template <typename T>
PoolResult<T> maxpool3d(const Var<T>& x, const Triple& kernel, const Triple& stride) {
    const Shape& xs = x.shape();
    require_rank5(xs, "maxpool3d");
    Shape os{xs[0], xs[1], 0, 0, 0};
    for (std::size_t i = 0; i < 3; ++i) {
        if (kernel[i] < 1 || stride[i] < 1) throw DimensionError("maxpool3d: invalid window");
        os[2 + i] = conv_output_extent(xs[2 + i], kernel[i], stride[i], 0);
        if (os[2 + i] < 1) {
            throw DimensionError(std::string("maxpool3d: window does not fit on the ") +
                                 kAxisNames[i] + " axis of " + to_string(xs));
        }
    }
    const Tensor<T>& xv = x.value();
    Tensor<T> out(os);
    PoolIndices idx{os, xs, std::vector<std::size_t>(out.size())};
    const std::size_t planes = xs[0] * xs[1];
    const std::size_t vol = xs[2] * xs[3] * xs[4];
    std::size_t o = 0;
    for (std::size_t p = 0; p < planes; ++p) {
        const std::size_t base = p * vol;
        for (std::size_t t = 0; t < os[2]; ++t) {
            for (std::size_t h = 0; h < os[3]; ++h) {
                for (std::size_t w = 0; w < os[4]; ++w, ++o) {
                    std::size_t best = 0;
                    bool first = true;
                    T best_v = 0;
                    // Row-major window scan: the first maximum seen has the lowest offset.
                    for (std::size_t a = 0; a < kernel[0]; ++a) {
                        for (std::size_t b = 0; b < kernel[1]; ++b) {
                            for (std::size_t d = 0; d < kernel[2]; ++d) {
                                const std::size_t src = base +
                                    ((t * stride[0] + a) * xs[3] + h * stride[1] + b) * xs[4] +
                                    w * stride[2] + d;
                                if (first || xv[src] > best_v) {
                                    best = src;
                                    best_v = xv[src];
                                    first = false;
                                }
                            }
                        }
                    }
                    out[o] = best_v;
                    idx.source[o] = best;
                }
            }
        }
    }
    const std::size_t ix = x.id();
    Var<T> y = x.tape().record(
        std::move(out), {x},
        [ix, src = idx.source](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
            Tensor<T>* gx = tape.grad_slot(ix);
            for (std::size_t i = 0; i < src.size(); ++i) (*gx)[src[i]] += g[i];
        },
        "maxpool3d");
    return {y, std::move(idx)};
}

template <typename T>
Var<T> maxunpool3d(const Var<T>& x, const PoolIndices& idx, const Shape& out_shape) {
    if (x.shape() != idx.shape) {
        throw ContractError("maxunpool3d: input " + to_string(x.shape()) +
                            " does not match pooled shape " + to_string(idx.shape));
    }
    validate_shape(out_shape);
    const std::size_t limit = element_count(out_shape);
    for (std::size_t s : idx.source) {
        if (s >= limit) {
            throw ContractError("maxunpool3d: index " + std::to_string(s) + " outside " +
                                to_string(out_shape));
        }
    }
    Tensor<T> out(out_shape);
    const Tensor<T>& xv = x.value();
    for (std::size_t i = 0; i < idx.source.size(); ++i) out[idx.source[i]] += xv[i];
    const std::size_t ix = x.id();
    return x.tape().record(
        std::move(out), {x},
        [ix, src = idx.source](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
            Tensor<T>* gx = tape.grad_slot(ix);
            for (std::size_t i = 0; i < src.size(); ++i) (*gx)[i] += g[src[i]];
        },
        "maxunpool3d");
}

template <typename T>
Var<T> avgpool3d(const Var<T>& x, const Triple& kernel, const Triple& stride,
                 const Triple& padding) {
    const Shape& xs = x.shape();
    require_rank5(xs, "avgpool3d");
    Shape os{xs[0], xs[1], 0, 0, 0};
    for (std::size_t i = 0; i < 3; ++i) {
        if (padding[i] >= kernel[i]) throw DimensionError("avgpool3d: padding must be < kernel");
        os[2 + i] = conv_output_extent(xs[2 + i], kernel[i], stride[i], padding[i]);
        if (os[2 + i] < 1) {
            throw DimensionError(std::string("avgpool3d: window does not fit on the ") +
                                 kAxisNames[i] + " axis of " + to_string(xs));
        }
    }
    // Each output is a weighted sum of input cells; the taps are shared by all planes.
    struct Tap {
        std::size_t out, in;
    };
    std::vector<Tap> taps;
    std::vector<T> inv_count(os[2] * os[3] * os[4]);
    std::size_t o = 0;
    for (std::size_t t = 0; t < os[2]; ++t) {
        for (std::size_t h = 0; h < os[3]; ++h) {
            for (std::size_t w = 0; w < os[4]; ++w, ++o) {
                std::size_t count = 0;
                for (std::size_t a = 0; a < kernel[0]; ++a) {
                    const long it = static_cast<long>(t * stride[0] + a) - static_cast<long>(padding[0]);
                    if (it < 0 || it >= static_cast<long>(xs[2])) continue;
                    for (std::size_t b = 0; b < kernel[1]; ++b) {
                        const long ih = static_cast<long>(h * stride[1] + b) - static_cast<long>(padding[1]);
                        if (ih < 0 || ih >= static_cast<long>(xs[3])) continue;
                        for (std::size_t d = 0; d < kernel[2]; ++d) {
                            const long iw = static_cast<long>(w * stride[2] + d) - static_cast<long>(padding[2]);
                            if (iw < 0 || iw >= static_cast<long>(xs[4])) continue;
                            taps.push_back({o, (static_cast<std::size_t>(it) * xs[3] +
                                                static_cast<std::size_t>(ih)) * xs[4] +
                                                   static_cast<std::size_t>(iw)});
                            ++count;
                        }
                    }
                }
                inv_count[o] = T{1} / static_cast<T>(count);
            }
        }
    }
    const std::size_t planes = xs[0] * xs[1];
    const std::size_t ivol = xs[2] * xs[3] * xs[4];
    const std::size_t ovol = inv_count.size();
    Tensor<T> out(os);
    const Tensor<T>& xv = x.value();
    for (std::size_t p = 0; p < planes; ++p) {
        const T* src = xv.raw() + p * ivol;
        T* dst = out.raw() + p * ovol;
        for (const Tap& tp : taps) dst[tp.out] += src[tp.in];
        for (std::size_t i = 0; i < ovol; ++i) dst[i] *= inv_count[i];
    }
    const std::size_t ix = x.id();
    return x.tape().record(
        std::move(out), {x},
        [ix, taps = std::move(taps), inv_count = std::move(inv_count), planes, ivol,
         ovol](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
            Tensor<T>* gx = tape.grad_slot(ix);
            for (std::size_t p = 0; p < planes; ++p) {
                const T* gp = g.raw() + p * ovol;
                T* dst = gx->raw() + p * ivol;
                for (const auto& tp : taps) dst[tp.in] += gp[tp.out] * inv_count[tp.out];
            }
        },
        "avgpool3d");
}

template <typename T>
Var<T> global_avg_pool_spatial(const Var<T>& x) {
    const Shape& xs = x.shape();
    require_rank5(xs, "global_avg_pool_spatial");
    const std::size_t groups = xs[0] * xs[1] * xs[2];
    const std::size_t area = xs[3] * xs[4];
    Tensor<T> out({xs[0], xs[1], xs[2], 1, 1});
    const Tensor<T>& xv = x.value();
    for (std::size_t gidx = 0; gidx < groups; ++gidx) {
        T s = 0;
        for (std::size_t i = 0; i < area; ++i) s += xv[gidx * area + i];
        out[gidx] = s / static_cast<T>(area);
    }
    const std::size_t ix = x.id();
    return x.tape().record(
        std::move(out), {x},
        [ix, groups, area](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
            Tensor<T>* gx = tape.grad_slot(ix);
            for (std::size_t gidx = 0; gidx < groups; ++gidx) {
                const T v = g[gidx] / static_cast<T>(area);
                for (std::size_t i = 0; i < area; ++i) (*gx)[gidx * area + i] += v;
            }
        },
        "global_avg_pool_spatial");
}

template <typename T>
Var<T> upsample_trilinear(const Var<T>& x, const Triple& target) {
    const Shape& xs = x.shape();
    require_rank5(xs, "upsample_trilinear");
    for (std::size_t e : target) {
        if (e < 1) throw DimensionError("upsample_trilinear: target extents must be >= 1");
    }
    const Shape os{xs[0], xs[1], target[0], target[1], target[2]};
    const std::size_t ix = x.id();
    if (os == xs) {
        return x.tape().record(
            x.value(), {x},
            [ix](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) { tape.accumulate(ix, g); },
            "upsample_trilinear");
    }
    const AxisTaps tt = make_taps(xs[2], os[2]);
    const AxisTaps th = make_taps(xs[3], os[3]);
    const AxisTaps tw = make_taps(xs[4], os[4]);
    const std::size_t planes = xs[0] * xs[1];
    const std::size_t ivol = xs[2] * xs[3] * xs[4];
    const std::size_t ovol = os[2] * os[3] * os[4];

    // Visits the 8 weighted corners of every output cell.
    auto for_each_corner = [&tt, &th, &tw, xs, os](auto&& fn) {
        std::size_t o = 0;
        for (std::size_t t = 0; t < os[2]; ++t) {
            const std::size_t t_idx[2] = {tt.lo[t], tt.hi[t]};
            const double t_wt[2] = {1.0 - tt.frac[t], tt.frac[t]};
            for (std::size_t h = 0; h < os[3]; ++h) {
                const std::size_t h_idx[2] = {th.lo[h], th.hi[h]};
                const double h_wt[2] = {1.0 - th.frac[h], th.frac[h]};
                for (std::size_t w = 0; w < os[4]; ++w, ++o) {
                    const std::size_t w_idx[2] = {tw.lo[w], tw.hi[w]};
                    const double w_wt[2] = {1.0 - tw.frac[w], tw.frac[w]};
                    for (int a = 0; a < 2; ++a) {
                        for (int b = 0; b < 2; ++b) {
                            for (int c = 0; c < 2; ++c) {
                                const std::size_t in =
                                    (t_idx[a] * xs[3] + h_idx[b]) * xs[4] + w_idx[c];
                                fn(o, in, t_wt[a] * h_wt[b] * w_wt[c]);
                            }
                        }
                    }
                }
            }
        }
    };

    struct Corner {
        std::size_t out, in;
        T weight;
    };
    std::vector<Corner> corners;
    corners.reserve(ovol * 8);
    for_each_corner([&corners](std::size_t o, std::size_t in, double wt) {
        if (wt != 0.0) corners.push_back({o, in, static_cast<T>(wt)});
    });

    Tensor<T> out(os);
    const Tensor<T>& xv = x.value();
    for (std::size_t p = 0; p < planes; ++p) {
        const T* src = xv.raw() + p * ivol;
        T* dst = out.raw() + p * ovol;
        for (const Corner& c : corners) dst[c.out] += c.weight * src[c.in];
    }
    return x.tape().record(
        std::move(out), {x},
        [ix, corners = std::move(corners), planes, ivol, ovol](Tape<T>& tape, const Tensor<T>&,
                                                              const Tensor<T>& g) {
            Tensor<T>* gx = tape.grad_slot(ix);
            for (std::size_t p = 0; p < planes; ++p) {
                const T* gp = g.raw() + p * ovol;
                T* dst = gx->raw() + p * ivol;
                for (const auto& c : corners) dst[c.in] += c.weight * gp[c.out];
            }
        },
        "upsample_trilinear");
}

#define STSA_INSTANTIATE_NN(T)                                                                  \
    template Var<T> conv3d<T>(const Var<T>&, const Var<T>&, const Var<T>*, const Triple&,       \
                              const Triple&);                                                   \
    template PoolResult<T> maxpool3d<T>(const Var<T>&, const Triple&, const Triple&);           \
    template Var<T> maxunpool3d<T>(const Var<T>&, const PoolIndices&, const Shape&);            \
    template Var<T> avgpool3d<T>(const Var<T>&, const Triple&, const Triple&, const Triple&);   \
    template Var<T> global_avg_pool_spatial<T>(const Var<T>&);                                  \
    template Var<T> upsample_trilinear<T>(const Var<T>&, const Triple&);

STSA_INSTANTIATE_NN(float)
STSA_INSTANTIATE_NN(double)

}  // namespace stsa
