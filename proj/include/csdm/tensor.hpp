#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "csdm/errors.hpp"

namespace csdm {

// Dense row-major tensor of 64-bit floats. Rank is almost always 1 or 2 here.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
        v.assign(numel_of(shape), 0.0);
    }
    Tensor(std::vector<std::size_t> s, std::vector<double> data)
        : shape(std::move(s)), v(std::move(data)) {
        if (v.size() != numel_of(shape))
            throw DimensionError("tensor: data size does not match shape");
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (auto d : s) n *= d;
        return n;
    }

    std::size_t numel() const { return v.size(); }
    std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    double& at(std::size_t i) { return v[i]; }
    double at(std::size_t i) const { return v[i]; }
    double& at(std::size_t i, std::size_t j) { return v[i * cols() + j]; }
    double at(std::size_t i, std::size_t j) const { return v[i * cols() + j]; }

    double* row(std::size_t i) { return v.data() + i * cols(); }
    const double* row(std::size_t i) const { return v.data() + i * cols(); }

    void zero() { std::fill(v.begin(), v.end(), 0.0); }
    bool all_finite() const;
    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    static Tensor row_vector(std::initializer_list<double> xs) {
        return Tensor({1, xs.size()}, std::vector<double>(xs));
    }
    static Tensor vector_of(std::vector<double> xs) {
        std::size_t n = xs.size();
        return Tensor({n}, std::move(xs));
    }
};

std::string shape_str(const std::vector<std::size_t>& s);

// Trainable tensor with accumulated gradient and Adam moments.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor m;
    Tensor v;
    int64_t step_count = 0;

    Parameter() = default;
    Parameter(std::string n, std::vector<std::size_t> shape)
        : name(std::move(n)), value(shape), grad(shape), m(shape), v(shape) {}

    std::size_t numel() const { return value.numel(); }
    void zero_grad() { grad.zero(); }
};

}  // namespace csdm
