#include "stsa/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace stsa {

namespace {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using ConstMap = Eigen::Map<const RowMajor<T>>;

template <typename T>
using MutMap = Eigen::Map<RowMajor<T>>;

std::string shapes_message(const char* op, const Shape& a, const Shape& b) {
    return std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b);
}

/// Offset into b for every element of a under extent-1 broadcasting.
std::vector<std::size_t> broadcast_offsets(const Shape& a, const Shape& b) {
    const std::size_t rank = a.size();
    const Shape bs = strides_of(b);
    std::vector<std::size_t> out(element_count(a));
    std::vector<std::size_t> idx(rank, 0);
    std::size_t boff = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = boff;
        for (std::size_t ax = rank; ax-- > 0;) {
            ++idx[ax];
            if (b[ax] != 1) boff += bs[ax];
            if (idx[ax] < a[ax]) break;
            if (b[ax] != 1) boff -= bs[ax] * a[ax];
            idx[ax] = 0;
        }
    }
    return out;
}

void check_broadcastable(const char* op, const Shape& a, const Shape& b) {
    if (a.size() != b.size()) throw DimensionError(shapes_message(op, a, b));
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (b[i] != a[i] && b[i] != 1) throw DimensionError(shapes_message(op, a, b));
    }
}

/// Splits a shape into (outer, axis, inner) extents around one axis.
struct AxisSplit {
    std::size_t outer = 1;
    std::size_t extent = 1;
    std::size_t inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    r.extent = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
    const auto M = static_cast<Eigen::Index>(m);
    const auto N = static_cast<Eigen::Index>(n);
    const auto K = static_cast<Eigen::Index>(k);
    MutMap<T> C(c, M, N);
    if (!accumulate) C.setZero();
    if (!trans_a && !trans_b) {
        C.noalias() += ConstMap<T>(a, M, K) * ConstMap<T>(b, K, N);
    } else if (trans_a && !trans_b) {
        C.noalias() += ConstMap<T>(a, K, M).transpose() * ConstMap<T>(b, K, N);
    } else if (!trans_a && trans_b) {
        C.noalias() += ConstMap<T>(a, M, K) * ConstMap<T>(b, N, K).transpose();
    } else {
        C.noalias() += ConstMap<T>(a, K, M).transpose() * ConstMap<T>(b, N, K).transpose();
    }
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) {
        throw DimensionError(shapes_message("matmul", as, bs));
    }
    const std::size_t m = as[0], k = as[1], n = bs[1];
    Tensor<T> out({m, n});
    gemm<T>(false, false, m, n, k, a.value().raw(), b.value().raw(), out.raw(), false);
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record(
        std::move(out), {a, b},
        [ia, ib, m, n, k](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
            if (Tensor<T>* ga = tape.grad_slot(ia)) {
                gemm<T>(false, true, m, k, n, g.raw(), tape.value(ib).raw(), ga->raw(), true);
            }
            if (Tensor<T>* gb = tape.grad_slot(ib)) {
                gemm<T>(true, false, k, n, m, tape.value(ia).raw(), g.raw(), gb->raw(), true);
            }
        },
        "matmul");
}

template <typename T>
Var<T> softmax_lastdim(const Var<T>& x) {
    const Tensor<T>& xv = x.value();
    const std::size_t len = xv.shape().back();
    const std::size_t rows = xv.size() / len;
    Tensor<T> out(xv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* src = xv.raw() + r * len;
        T* dst = out.raw() + r * len;
        T mx = src[0];
        for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, src[j]);
        T total = 0;
        for (std::size_t j = 0; j < len; ++j) {
            dst[j] = std::exp(src[j] - mx);
            total += dst[j];
        }
        const T inv = T{1} / total;
        for (std::size_t j = 0; j < len; ++j) dst[j] *= inv;
    }
    const std::size_t ix = x.id();
    return x.tape().record(
        std::move(out), {x},
        [ix, len, rows](Tape<T>& tape, const Tensor<T>& y, const Tensor<T>& g) {
            Tensor<T>* gx = tape.grad_slot(ix);
            for (std::size_t r = 0; r < rows; ++r) {
                const T* yr = y.raw() + r * len;
                const T* gr = g.raw() + r * len;
                T dot = 0;
                for (std::size_t j = 0; j < len; ++j) dot += yr[j] * gr[j];
                T* dst = gx->raw() + r * len;
                for (std::size_t j = 0; j < len; ++j) dst[j] += yr[j] * (gr[j] - dot);
            }
        },
        "softmax_lastdim");
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  std::vector<std::size_t> axes, double epsilon) {
    const Shape& xs = x.shape();
    std::sort(axes.begin(), axes.end());
    axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
    if (axes.empty()) throw DimensionError("layer_norm: no axes given");
    for (std::size_t ax : axes) {
        if (ax >= xs.size()) {
            throw DimensionError("layer_norm: axis " + std::to_string(ax) + " out of range for " +
                                 to_string(xs));
        }
    }
    Shape norm_shape;
    for (std::size_t ax : axes) norm_shape.push_back(xs[ax]);
    if (gamma.shape() != norm_shape || beta.shape() != norm_shape) {
        throw DimensionError("layer_norm: gamma/beta must have shape " + to_string(norm_shape) +
                             ", got " + to_string(gamma.shape()) + " and " +
                             to_string(beta.shape()));
    }

    // Offsets of the normalised sub-block (inner) and of each group (outer).
    const Shape st = strides_of(xs);
    std::vector<std::size_t> inner{0};
    std::vector<std::size_t> outer{0};
    for (std::size_t ax = 0; ax < xs.size(); ++ax) {
        auto& list = std::binary_search(axes.begin(), axes.end(), ax) ? inner : outer;
        std::vector<std::size_t> next;
        next.reserve(list.size() * xs[ax]);
        for (std::size_t base : list) {
            for (std::size_t i = 0; i < xs[ax]; ++i) next.push_back(base + i * st[ax]);
        }
        list = std::move(next);
    }

    const std::size_t n = inner.size();
    const Tensor<T>& xv = x.value();
    const T* gv = gamma.value().raw();
    const T* bv = beta.value().raw();
    Tensor<T> out(xs);
    Tensor<T> xhat(xs);
    std::vector<T> inv_std(outer.size());
    for (std::size_t g = 0; g < outer.size(); ++g) {
        const std::size_t base = outer[g];
        T mu = 0;
        for (std::size_t j = 0; j < n; ++j) mu += xv[base + inner[j]];
        mu /= static_cast<T>(n);
        T var = 0;
        for (std::size_t j = 0; j < n; ++j) {
            const T d = xv[base + inner[j]] - mu;
            var += d * d;
        }
        var /= static_cast<T>(n);
        const T is = T{1} / std::sqrt(var + static_cast<T>(epsilon));
        inv_std[g] = is;
        for (std::size_t j = 0; j < n; ++j) {
            const std::size_t o = base + inner[j];
            const T h = (xv[o] - mu) * is;
            xhat[o] = h;
            out[o] = gv[j] * h + bv[j];
        }
    }

    const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
    return x.tape().record(
        std::move(out), {x, gamma, beta},
        [ix, ig, ib, inner = std::move(inner), outer = std::move(outer), xhat = std::move(xhat),
         inv_std = std::move(inv_std)](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
            const std::size_t n = inner.size();
            const T* gv = tape.value(ig).raw();
            Tensor<T>* gx = tape.grad_slot(ix);
            Tensor<T>* gg = tape.grad_slot(ig);
            Tensor<T>* gb = tape.grad_slot(ib);
            for (std::size_t grp = 0; grp < outer.size(); ++grp) {
                const std::size_t base = outer[grp];
                T mean_d = 0, mean_dh = 0;
                for (std::size_t j = 0; j < n; ++j) {
                    const std::size_t o = base + inner[j];
                    const T d = g[o] * gv[j];
                    mean_d += d;
                    mean_dh += d * xhat[o];
                    if (gg) (*gg)[j] += g[o] * xhat[o];
                    if (gb) (*gb)[j] += g[o];
                }
                if (!gx) continue;
                mean_d /= static_cast<T>(n);
                mean_dh /= static_cast<T>(n);
                for (std::size_t j = 0; j < n; ++j) {
                    const std::size_t o = base + inner[j];
                    const T d = g[o] * gv[j];
                    (*gx)[o] += inv_std[grp] * (d - mean_d - xhat[o] * mean_dh);
                }
            }
        },
        "layer_norm");
}

template <typename T>
Var<T> apply_activation(const Var<T>& x, Activation kind) {
    const Tensor<T>& xv = x.value();
    Tensor<T> out(xv.shape());
    const std::size_t n = xv.size();
    if (kind == Activation::relu) {
        for (std::size_t i = 0; i < n; ++i) out[i] = xv[i] > T{0} ? xv[i] : T{0};
    } else {
        for (std::size_t i = 0; i < n; ++i) out[i] = T{1} / (T{1} + std::exp(-xv[i]));
    }
    const std::size_t ix = x.id();
    return x.tape().record(
        std::move(out), {x},
        [ix, kind](Tape<T>& tape, const Tensor<T>& y, const Tensor<T>& g) {
            Tensor<T>* gx = tape.grad_slot(ix);
            const std::size_t n = y.size();
            if (kind == Activation::relu) {
                const Tensor<T>& xv = tape.value(ix);
                for (std::size_t i = 0; i < n; ++i) {
                    if (xv[i] > T{0}) (*gx)[i] += g[i];
                }
            } else {
                for (std::size_t i = 0; i < n; ++i) (*gx)[i] += g[i] * y[i] * (T{1} - y[i]);
            }
        },
        kind == Activation::relu ? "relu" : "sigmoid");
}

template <typename T>
Var<T> elementwise(const Var<T>& a, const Var<T>& b, Elementwise kind) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    check_broadcastable(kind == Elementwise::add ? "add" : "mul", as, bs);
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    const std::size_t n = av.size();
    Tensor<T> out(as);
    const bool same = as == bs;
    std::vector<std::size_t> map;
    if (!same) map = broadcast_offsets(as, bs);
    for (std::size_t i = 0; i < n; ++i) {
        const T rhs = bv[same ? i : map[i]];
        out[i] = kind == Elementwise::add ? av[i] + rhs : av[i] * rhs;
    }
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record(
        std::move(out), {a, b},
        [ia, ib, kind, same, map = std::move(map)](Tape<T>& tape, const Tensor<T>&,
                                                  const Tensor<T>& g) {
            const std::size_t n = g.size();
            if (Tensor<T>* ga = tape.grad_slot(ia)) {
                if (kind == Elementwise::add) {
                    for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i];
                } else {
                    const Tensor<T>& bv = tape.value(ib);
                    for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i] * bv[same ? i : map[i]];
                }
            }
            if (Tensor<T>* gb = tape.grad_slot(ib)) {
                if (kind == Elementwise::add) {
                    for (std::size_t i = 0; i < n; ++i) (*gb)[same ? i : map[i]] += g[i];
                } else {
                    const Tensor<T>& av = tape.value(ia);
                    for (std::size_t i = 0; i < n; ++i) (*gb)[same ? i : map[i]] += g[i] * av[i];
                }
            }
        },
        kind == Elementwise::add ? "add" : "mul");
}

template <typename T>
Var<T> divide(const Var<T>& a, const Var<T>& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    check_broadcastable("divide", as, bs);
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    const bool same = as == bs;
    std::vector<std::size_t> map;
    if (!same) map = broadcast_offsets(as, bs);
    Tensor<T> out(as);
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] / bv[same ? i : map[i]];
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record(
        std::move(out), {a, b},
        [ia, ib, same, map = std::move(map)](Tape<T>& tape, const Tensor<T>& y,
                                            const Tensor<T>& g) {
            const Tensor<T>& bv = tape.value(ib);
            const std::size_t n = g.size();
            if (Tensor<T>* ga = tape.grad_slot(ia)) {
                for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i] / bv[same ? i : map[i]];
            }
            if (Tensor<T>* gb = tape.grad_slot(ib)) {
                for (std::size_t i = 0; i < n; ++i) {
                    const std::size_t j = same ? i : map[i];
                    (*gb)[j] -= g[i] * y[i] / bv[j];
                }
            }
        },
        "divide");
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
    Tensor<T> out(x.shape());
    const Tensor<T>& xv = x.value();
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * factor;
    const std::size_t ix = x.id();
    return x.tape().record(
        std::move(out), {x},
        [ix, factor](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
            Tensor<T>* gx = tape.grad_slot(ix);
            for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * factor;
        },
        "scale");
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
    Tensor<T> out = x.value().reshaped(std::move(shape));
    const std::size_t ix = x.id();
    return x.tape().record(
        std::move(out), {x},
        [ix](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
            Tensor<T>* gx = tape.grad_slot(ix);
            for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
        },
        "reshape");
}

template <typename T>
Tensor<T> permute_tensor(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
    const Shape& xs = x.shape();
    if (perm.size() != xs.size()) {
        throw DimensionError("permute: permutation rank does not match " + to_string(xs));
    }
    std::vector<bool> seen(perm.size(), false);
    for (std::size_t p : perm) {
        if (p >= perm.size() || seen[p]) throw DimensionError("permute: invalid permutation");
        seen[p] = true;
    }
    Shape os(xs.size());
    for (std::size_t i = 0; i < perm.size(); ++i) os[i] = xs[perm[i]];
    const Shape in_strides = strides_of(xs);
    Shape src_stride(xs.size());
    for (std::size_t i = 0; i < perm.size(); ++i) src_stride[i] = in_strides[perm[i]];

    Tensor<T> out(os);
    const std::size_t rank = os.size();
    std::vector<std::size_t> idx(rank, 0);
    std::size_t src = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[src];
        for (std::size_t ax = rank; ax-- > 0;) {
            ++idx[ax];
            src += src_stride[ax];
            if (idx[ax] < os[ax]) break;
            src -= src_stride[ax] * os[ax];
            idx[ax] = 0;
        }
    }
    return out;
}

template <typename T>
Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& perm) {
    Tensor<T> out = permute_tensor(x.value(), perm);
    std::vector<std::size_t> inverse(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inverse[perm[i]] = i;
    const std::size_t ix = x.id();
    return x.tape().record(
        std::move(out), {x},
        [ix, inverse](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
            Tensor<T> back = permute_tensor(g, inverse);
            tape.accumulate(ix, back);
        },
        "permute");
}

template <typename T>
Var<T> transpose(const Var<T>& x) {
    if (x.shape().size() != 2) {
        throw DimensionError("transpose expects a rank-2 tensor, got " + to_string(x.shape()));
    }
    return permute(x, {1, 0});
}

template <typename T>
Tensor<T> concat_tensors(const std::vector<const Tensor<T>*>& parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    const Shape& first = parts.front()->shape();
    if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + to_string(first));
    Shape os = first;
    os[axis] = 0;
    for (const Tensor<T>* p : parts) {
        const Shape& ps = p->shape();
        bool ok = ps.size() == first.size();
        for (std::size_t i = 0; ok && i < ps.size(); ++i) ok = i == axis || ps[i] == first[i];
        if (!ok) throw DimensionError(shapes_message("concat", first, ps));
        os[axis] += ps[axis];
    }
    Tensor<T> out(os);
    const AxisSplit osplit = split_at(os, axis);
    std::size_t offset = 0;
    for (const Tensor<T>* p : parts) {
        const AxisSplit ps = split_at(p->shape(), axis);
        const std::size_t block = ps.extent * ps.inner;
        for (std::size_t o = 0; o < ps.outer; ++o) {
            std::copy_n(p->raw() + o * block, block,
                        out.raw() + o * osplit.extent * osplit.inner + offset * osplit.inner);
        }
        offset += ps.extent;
    }
    return out;
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    std::vector<const Tensor<T>*> values;
    std::vector<std::size_t> ids, extents;
    for (const auto& p : parts) {
        values.push_back(&p.value());
        ids.push_back(p.id());
    }
    Tensor<T> out = concat_tensors(values, axis);
    for (const auto& p : parts) extents.push_back(p.shape()[axis]);
    return parts.front().tape().record(
        std::move(out), parts,
        [ids, extents, axis](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
            std::size_t start = 0;
            for (std::size_t i = 0; i < ids.size(); ++i) {
                if (tape.requires_grad(ids[i])) {
                    tape.accumulate(ids[i], slice_tensor(g, axis, start, extents[i]));
                }
                start += extents[i];
            }
        },
        "concat");
}

template <typename T>
Tensor<T> slice_tensor(const Tensor<T>& x, std::size_t axis, std::size_t start,
                       std::size_t length) {
    const Shape& xs = x.shape();
    if (axis >= xs.size()) throw DimensionError("slice: axis out of range for " + to_string(xs));
    if (length == 0 || start + length > xs[axis]) {
        throw DimensionError("slice [" + std::to_string(start) + ", " +
                             std::to_string(start + length) + ") out of range on axis " +
                             std::to_string(axis) + " of " + to_string(xs));
    }
    Shape os = xs;
    os[axis] = length;
    Tensor<T> out(os);
    const AxisSplit s = split_at(xs, axis);
    for (std::size_t o = 0; o < s.outer; ++o) {
        std::copy_n(x.raw() + (o * s.extent + start) * s.inner, length * s.inner,
                    out.raw() + o * length * s.inner);
    }
    return out;
}

template <typename T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
    Tensor<T> out = slice_tensor(x.value(), axis, start, length);
    const std::size_t ix = x.id();
    const AxisSplit s = split_at(x.shape(), axis);
    return x.tape().record(
        std::move(out), {x},
        [ix, s, start, length](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
            Tensor<T>* gx = tape.grad_slot(ix);
            for (std::size_t o = 0; o < s.outer; ++o) {
                T* dst = gx->raw() + (o * s.extent + start) * s.inner;
                const T* src = g.raw() + o * length * s.inner;
                for (std::size_t i = 0; i < length * s.inner; ++i) dst[i] += src[i];
            }
        },
        "slice");
}

template <typename T>
Var<T> sum(const Var<T>& x) {
    const Tensor<T>& xv = x.value();
    T total = 0;
    for (std::size_t i = 0; i < xv.size(); ++i) total += xv[i];
    const std::size_t ix = x.id();
    return x.tape().record(
        Tensor<T>::scalar(total), {x},
        [ix](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
            Tensor<T>* gx = tape.grad_slot(ix);
            for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += g[0];
        },
        "sum");
}

template <typename T>
Var<T> mean(const Var<T>& x) {
    return scale(sum(x), T{1} / static_cast<T>(x.value().size()));
}

#define STSA_INSTANTIATE_OPS(T)                                                               \
    template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, const T*,       \
                          const T*, T*, bool);                                                \
    template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                  \
    template Var<T> softmax_lastdim<T>(const Var<T>&);                                        \
    template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&,                \
                                  std::vector<std::size_t>, double);                          \
    template Var<T> apply_activation<T>(const Var<T>&, Activation);                           \
    template Var<T> elementwise<T>(const Var<T>&, const Var<T>&, Elementwise);                \
    template Var<T> divide<T>(const Var<T>&, const Var<T>&);                                  \
    template Var<T> scale<T>(const Var<T>&, T);                                               \
    template Var<T> reshape<T>(const Var<T>&, Shape);                                         \
    template Var<T> transpose<T>(const Var<T>&);                                              \
    template Var<T> permute<T>(const Var<T>&, const std::vector<std::size_t>&);               \
    template Var<T> concat<T>(const std::vector<Var<T>>&, std::size_t);                       \
    template Var<T> slice<T>(const Var<T>&, std::size_t, std::size_t, std::size_t);           \
    template Var<T> sum<T>(const Var<T>&);                                                    \
    template Var<T> mean<T>(const Var<T>&);                                                   \
    template Tensor<T> permute_tensor<T>(const Tensor<T>&, const std::vector<std::size_t>&);  \
    template Tensor<T> slice_tensor<T>(const Tensor<T>&, std::size_t, std::size_t,            \
                                       std::size_t);                                          \
    template Tensor<T> concat_tensors<T>(const std::vector<const Tensor<T>*>&, std::size_t);

STSA_INSTANTIATE_OPS(float)
STSA_INSTANTIATE_OPS(double)

}  // namespace stsa
