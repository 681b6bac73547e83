#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cseg/error.hpp"

namespace cseg {

// Ordered list of positive dimensions. 4-D data is laid out (batch, channels, height, width).
class Shape {
public:
    Shape() = default;
    Shape(std::initializer_list<std::size_t> dims);
    explicit Shape(std::vector<std::size_t> dims);

    std::size_t rank() const { return dims_.size(); }
    std::size_t operator[](std::size_t i) const { return dims_.at(i); }
    std::size_t numel() const;
    const std::vector<std::size_t>& dims() const { return dims_; }

    bool operator==(const Shape&) const = default;

    std::string str() const;

private:
    std::vector<std::size_t> dims_;
};

// Dense row-major array with an optional gradient buffer of identical length.
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;
    explicit BasicTensor(Shape shape, T fill = T(0));
    BasicTensor(Shape shape, std::vector<T> values);

    const Shape& shape() const { return shape_; }
    std::size_t dim(std::size_t i) const { return shape_[i]; }
    std::size_t rank() const { return shape_.rank(); }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    std::span<T> values() { return values_; }
    std::span<const T> values() const { return values_; }
    T* data() { return values_.data(); }
    const T* data() const { return values_.data(); }

    T& operator[](std::size_t i) { return values_[i]; }
    const T& operator[](std::size_t i) const { return values_[i]; }

    // 4-D accessors (b, c, y, x)
    T& at(std::size_t b, std::size_t c, std::size_t y, std::size_t x);
    const T& at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const;

    bool has_grad() const { return grad_.has_value(); }
    std::span<T> grad();
    std::span<const T> grad() const;
    // Allocates a zeroed gradient buffer if none exists.
    std::span<T> ensure_grad();
    void zero_grad();
    void drop_grad() { grad_.reset(); }

    void fill(T v);
    BasicTensor reshaped(Shape shape) const;

    template <typename U>
    BasicTensor<U> cast() const {
        std::vector<U> out(values_.begin(), values_.end());
        return BasicTensor<U>(shape_, std::move(out));
    }

    bool all_finite() const;

    // Bitwise value equality (shape and every element).
    bool identical(const BasicTensor& other) const;

private:
    Shape shape_;
    std::vector<T> values_;
    std::optional<std::vector<T>> grad_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace cseg
