#pragma once

#include <cstddef>
#include <vector>

#include "stsa/tape.hpp"
#include "stsa/tensor.hpp"

namespace stsa {

enum class Activation { relu, sigmoid };
enum class Elementwise { add, mul };

/// Row-major GEMM: c (m x n) = op(a) * op(b) [+ c if accumulate], where op(a)
/// is m x k and op(b) is k x n. Single-threaded with a fixed reduction order.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate);

/// (m,k) x (k,n) -> (m,n).
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

/// Softmax over the last axis with max subtraction.
template <typename T>
Var<T> softmax_lastdim(const Var<T>& x);

/// Layer normalisation over the listed axes (any subset, any order is
/// normalised to ascending). gamma and beta have the extents of the
/// normalised axes in ascending axis order.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  std::vector<std::size_t> axes, double epsilon = 1e-5);

template <typename T>
Var<T> apply_activation(const Var<T>& x, Activation kind);

template <typename T>
Var<T> relu(const Var<T>& x) {
    return apply_activation(x, Activation::relu);
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
    return apply_activation(x, Activation::sigmoid);
}

/// a (op) b. b must have a's rank with every extent equal to a's or 1;
/// extent-1 axes of b are stretched across a.
template <typename T>
Var<T> elementwise(const Var<T>& a, const Var<T>& b, Elementwise kind);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    return elementwise(a, b, Elementwise::add);
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    return elementwise(a, b, Elementwise::mul);
}

/// a / b with b broadcast like elementwise().
template <typename T>
Var<T> divide(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& x, T factor);

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

/// Rank-2 transpose.
template <typename T>
Var<T> transpose(const Var<T>& x);

/// General axis permutation: output axis i is input axis perm[i].
template <typename T>
Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& perm);

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis);

template <typename T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t start, std::size_t length);

/// Sum of all elements as a shape-(1) tensor.
template <typename T>
Var<T> sum(const Var<T>& x);

template <typename T>
Var<T> mean(const Var<T>& x);

// Plain-tensor helpers shared by the graph ops and by tests.
template <typename T>
Tensor<T> permute_tensor(const Tensor<T>& x, const std::vector<std::size_t>& perm);

template <typename T>
Tensor<T> slice_tensor(const Tensor<T>& x, std::size_t axis, std::size_t start,
                       std::size_t length);

template <typename T>
Tensor<T> concat_tensors(const std::vector<const Tensor<T>*>& parts, std::size_t axis);

}  // namespace stsa
