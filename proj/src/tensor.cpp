#include "cseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace cseg {

namespace {

void check_dims(const std::vector<std::size_t>& dims) {
    for (std::size_t d : dims) {
        if (d == 0) {
            throw ShapeError("shape dimensions must be >= 1");
        }
    }
}

}  // namespace

Shape::Shape(std::initializer_list<std::size_t> dims) : dims_(dims) { check_dims(dims_); }

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) { check_dims(dims_); }

std::size_t Shape::numel() const {
    if (dims_.empty()) return 0;
    std::size_t n = 1;
    for (std::size_t d : dims_) n *= d;
    return n;
}

std::string Shape::str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims_.size(); ++i) {
        if (i) os << 'x';
        os << dims_[i];
    }
    os << ']';
    return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(std::move(shape)), values_(shape_.numel(), fill) {}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != shape_.numel()) {
        throw ShapeError("tensor of shape " + shape_.str() + " given " + std::to_string(values_.size()) +
                         " values");
    }
}

template <typename T>
T& BasicTensor<T>::at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) {
    return values_[((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
}

template <typename T>
const T& BasicTensor<T>::at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
    return values_[((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
}

template <typename T>
std::span<T> BasicTensor<T>::grad() {
    if (!grad_) throw Error("tensor has no gradient buffer");
    return *grad_;
}

template <typename T>
std::span<const T> BasicTensor<T>::grad() const {
    if (!grad_) throw Error("tensor has no gradient buffer");
    return *grad_;
}

template <typename T>
std::span<T> BasicTensor<T>::ensure_grad() {
    if (!grad_) grad_.emplace(values_.size(), T(0));
    return *grad_;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
}

template <typename T>
void BasicTensor<T>::fill(T v) {
    std::fill(values_.begin(), values_.end(), v);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
    if (shape.numel() != values_.size()) {
        throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    return BasicTensor(std::move(shape), values_);
}

template <typename T>
bool BasicTensor<T>::all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
bool BasicTensor<T>::identical(const BasicTensor& other) const {
    return shape_ == other.shape_ && values_.size() == other.values_.size() &&
           (values_.empty() || std::memcmp(values_.data(), other.values_.data(), values_.size() * sizeof(T)) == 0);
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace cseg
