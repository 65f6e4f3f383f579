#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "kinet/errors.hpp"

namespace kinet {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
}

// Dense row-major tensor. Rank is dynamic (0..4 in practice). The scalar type
// is a template parameter: float for training, double for gradient checking.
template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(numel_of(shape_), T(0)) {
        for (int64_t d : shape_) {
            if (d <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape_));
        }
    }

    static Tensor full(Shape shape, T v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }
    static Tensor scalar(T v) { return full({1}, v); }

    const Shape& shape() const { return shape_; }
    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    int64_t dim(int64_t i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](int64_t i) {
        assert(i >= 0 && i < numel());
        return data_[static_cast<size_t>(i)];
    }
    T operator[](int64_t i) const {
        assert(i >= 0 && i < numel());
        return data_[static_cast<size_t>(i)];
    }

    T& at(int64_t i, int64_t j) {
        assert(rank() == 2);
        return data_[static_cast<size_t>(i * shape_[1] + j)];
    }
    T at(int64_t i, int64_t j) const {
        assert(rank() == 2);
        return data_[static_cast<size_t>(i * shape_[1] + j)];
    }
    T& at(int64_t n, int64_t c, int64_t y, int64_t x) {
        assert(rank() == 4);
        return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
    }
    T at(int64_t n, int64_t c, int64_t y, int64_t x) const {
        assert(rank() == 4);
        return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (T v : data_) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.reshape_raw(shape_);
        for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
        return out;
    }

    // For cast(); bypasses the positive-extent check already done on `this`.
    void reshape_raw(const Shape& shape) {
        shape_ = shape;
        data_.assign(static_cast<size_t>(numel_of(shape)), T(0));
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

template <typename T>
void require_shape(const Tensor<T>& t, const Shape& expected, const char* what) {
    if (t.shape() != expected) {
        throw ShapeError(std::string(what) + ": expected " + shape_str(expected) + ", got " +
                         shape_str(t.shape()));
    }
}

template <typename T>
void require_rank(const Tensor<T>& t, int64_t rank, const char* what) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
    }
}

}  // namespace kinet
