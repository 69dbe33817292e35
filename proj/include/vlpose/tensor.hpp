#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace vlpose {

/// Raised when tensor shapes are incompatible for an operation.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised for invalid model / run configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when an input file cannot be parsed.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a keyed lookup (category id, prompt, parameter name) fails.
class LookupError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

/// Dense row-major array. Plain value type; gradients live on Var (autograd.hpp).
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_numel(shape_) != data_.size())
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }

    static Tensor identity(std::size_t n) {
        Tensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = T(1);
        return t;
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    const std::vector<T>& vec() const noexcept { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::size_t i, std::size_t j) { return data_[i * shape_.back() + j]; }
    const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_.back() + j]; }

    /// Same data, new shape (element count must match).
    Tensor reshaped(Shape s) const {
        if (shape_numel(s) != numel())
            throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
        return Tensor(std::move(s), data_);
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    T max_abs() const {
        T m = T(0);
        for (T v : data_) m = std::max(m, std::abs(v));
        return m;
    }

    T sum() const { return std::accumulate(data_.begin(), data_.end(), T(0)); }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

/// Largest absolute elementwise difference; shapes must agree.
template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw DimensionError("shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    T m = T(0);
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace vlpose
