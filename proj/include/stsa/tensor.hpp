#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "stsa/error.hpp"

namespace stsa {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

inline std::string to_string(const Shape& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

inline void validate_shape(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor rank must be at least 1");
    for (std::size_t e : shape) {
        if (e == 0) throw DimensionError("zero extent in shape " + to_string(shape));
    }
}

/// Row-major strides of a shape.
inline Shape strides_of(const Shape& shape) {
    Shape s(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
    return s;
}

/// Dense row-major array with value semantics. Extents are all >= 1 and the
/// rank is at least 1; a scalar is a tensor of shape (1).
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() : shape_{1}, data_(1, T{0}) {}

    explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
        validate_shape(shape_);
        data_.assign(element_count(shape_), fill);
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape(shape_);
        if (data_.size() != element_count(shape_)) {
            throw DimensionError("data length " + std::to_string(data_.size()) +
                                 " does not match shape " + to_string(shape_));
        }
    }

    static Tensor scalar(T v) { return Tensor(Shape{1}, v); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t extent(std::size_t axis) const {
        if (axis >= shape_.size()) {
            throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                                 to_string(shape_));
        }
        return shape_[axis];
    }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    T* raw() noexcept { return data_.data(); }
    const T* raw() const noexcept { return data_.data(); }
    const std::vector<T>& values() const noexcept { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    /// Element access by multi-index (row-major).
    T& at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
    const T& at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

    std::size_t offset(std::initializer_list<std::size_t> index) const {
        if (index.size() != shape_.size()) {
            throw DimensionError("index rank " + std::to_string(index.size()) +
                                 " does not match shape " + to_string(shape_));
        }
        std::size_t off = 0;
        std::size_t axis = 0;
        for (std::size_t i : index) {
            if (i >= shape_[axis]) throw DimensionError("index out of range in " + to_string(shape_));
            off = off * shape_[axis] + i;
            ++axis;
        }
        return off;
    }

    /// Same data under a new shape with an equal element count.
    Tensor reshaped(Shape shape) const& {
        Tensor t(*this);
        t.reshape_in_place(std::move(shape));
        return t;
    }
    Tensor reshaped(Shape shape) && {
        reshape_in_place(std::move(shape));
        return std::move(*this);
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return Tensor<U>(shape_, std::move(out));
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    bool operator==(const Tensor& other) const {
        return shape_ == other.shape_ && data_ == other.data_;
    }

private:
    void reshape_in_place(Shape shape) {
        validate_shape(shape);
        if (element_count(shape) != data_.size()) {
            throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
        }
        shape_ = std::move(shape);
    }

    Shape shape_;
    std::vector<T> data_;
};

/// Throws if any element is NaN or infinite. Only called from the tape when
/// finite-checking is compiled in (STSA_CHECK_FINITE).
template <typename T>
void require_finite(const Tensor<T>& t, std::string_view where) {
    if (!t.all_finite()) {
        throw ContractError("non-finite value produced by " + std::string(where));
    }
}

}  // namespace stsa
