#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "simreglab/rng.hpp"

namespace simreg {

// Dense row-major tensor of 64-bit floats. Rank 0 is a scalar.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)), data(checked_numel(shape), 0.0) {}
    Tensor(std::vector<int64_t> s, double fill) : shape(std::move(s)), data(checked_numel(shape), fill) {}
    Tensor(std::vector<int64_t> s, std::vector<double> d);

    static Tensor scalar(double v);
    static Tensor vector(std::initializer_list<double> vals);
    static Tensor vector(std::vector<double> vals);
    // values given row by row
    static Tensor matrix(int64_t rows, int64_t cols, std::vector<double> vals);
    static Tensor randn(const std::vector<int64_t>& s, Rng& rng, double std_dev = 1.0);

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t rank() const { return static_cast<int64_t>(shape.size()); }
    int64_t extent(int64_t axis) const { return shape[static_cast<size_t>(axis)]; }

    double& operator()(int64_t i) { return data[static_cast<size_t>(i)]; }
    double operator()(int64_t i) const { return data[static_cast<size_t>(i)]; }
    double& operator()(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
    double operator()(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }

    bool all_finite() const;
    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    static int64_t checked_numel(const std::vector<int64_t>& s);
};

std::string shape_to_string(const std::vector<int64_t>& s);

}  // namespace simreg
