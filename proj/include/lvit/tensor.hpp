#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lvit/errors.hpp"

namespace lvit {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

/// Dense row-major tensor of 64-bit floats. `node` links the tensor into the
/// Tape that produced it (-1 when detached).
struct Tensor {
    Shape shape;
    std::vector<double> data;
    std::int64_t node = -1;

    Tensor() = default;

    explicit Tensor(Shape s) : shape(std::move(s)), data(numel_of(shape), 0.0) {
        check_dims();
    }

    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        check_dims();
        if (data.size() != numel_of(shape)) {
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        }
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor full(Shape s, double v) {
        Tensor t(std::move(s));
        for (double& x : t.data) x = v;
        return t;
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    std::size_t rows() const { return shape.at(0); }
    std::size_t cols() const { return shape.at(1); }

    double& at(std::size_t i) { return data[i]; }
    double at(std::size_t i) const { return data[i]; }

    double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

private:
    void check_dims() const {
        for (std::size_t d : shape) {
            if (d == 0) throw ShapeError("zero dimension in shape " + shape_str(shape));
        }
    }
};

inline bool all_finite(const Tensor& t) {
    for (double v : t.data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

/// Row-major strides for a shape.
inline std::vector<std::size_t> strides_of(const Shape& shape) {
    std::vector<std::size_t> strides(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
    return strides;
}

}  // namespace lvit
