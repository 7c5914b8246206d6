#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ento/error.hpp"

namespace ento {

struct Shape {
    std::size_t n = 0;
    std::size_t c = 0;
    std::size_t h = 0;
    std::size_t w = 0;

    constexpr std::size_t numel() const { return n * c * h * w; }
    constexpr std::size_t plane() const { return h * w; }
    constexpr bool operator==(const Shape&) const = default;

    std::string str() const {
        std::ostringstream os;
        os << '[' << n << ',' << c << ',' << h << ',' << w << ']';
        return os.str();
    }
};

/// Dense [N,C,H,W] array, row-major. Value semantics; copies are deep.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {}
    Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
        if (data_.size() != shape_.numel()) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_.str());
        }
    }

    static Tensor scalar(T v) { return Tensor(Shape{1, 1, 1, 1}, v); }

    const Shape& shape() const { return shape_; }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    T* ptr() { return data_.data(); }
    const T* ptr() const { return data_.data(); }

    std::size_t offset(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
        return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }
    T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) { return data_[offset(n, c, y, x)]; }
    T at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const { return data_[offset(n, c, y, x)]; }

    T& operator[](std::size_t i) { return data_[i]; }
    T operator[](std::size_t i) const { return data_[i]; }

    T* plane(std::size_t n, std::size_t c) { return data_.data() + offset(n, c, 0, 0); }
    const T* plane(std::size_t n, std::size_t c) const { return data_.data() + offset(n, c, 0, 0); }

    /// Scalar value of a [1,1,1,1] tensor.
    T item() const {
        if (shape_ != Shape{1, 1, 1, 1}) {
            throw ShapeError("item() requires a [1,1,1,1] tensor, got " + shape_.str());
        }
        return data_[0];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <class U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

    /// Bit-level equality of shape and values.
    bool identical(const Tensor& other) const {
        return shape_ == other.shape_ &&
               std::equal(data_.begin(), data_.end(), other.data_.begin(), other.data_.end(),
                          [](T a, T b) { return std::memcmp(&a, &b, sizeof(T)) == 0; });
    }

private:
    Shape shape_{};
    std::vector<T> data_;
};

/// Convolution geometry. Padding is always kernel/2 (zero padding).
struct ConvSpec {
    std::size_t kernel = 3;
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t stride = 1;
    bool has_bias = true;

    std::size_t padding() const { return kernel / 2; }
    Shape weight_shape() const { return Shape{out_channels, in_channels, kernel, kernel}; }
    Shape bias_shape() const { return Shape{1, out_channels, 1, 1}; }
    std::size_t out_size(std::size_t in) const { return (in + 2 * padding() - kernel) / stride + 1; }
    std::size_t param_count() const {
        return out_channels * in_channels * kernel * kernel + (has_bias ? out_channels : 0);
    }

    void validate() const {
        if (kernel != 1 && kernel != 3 && kernel != 7) {
            throw ShapeError("conv kernel must be 1, 3 or 7, got " + std::to_string(kernel));
        }
        if (in_channels == 0 || out_channels == 0) throw ShapeError("conv channel counts must be positive");
        if (stride != 1 && stride != 2) throw ShapeError("conv stride must be 1 or 2");
    }
};

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
    if (a != b) {
        throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
    }
}

} // namespace ento
