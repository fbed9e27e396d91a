#pragma once

// Dense rank-1..4 tensor of 32-bit floats, row-major with the last axis
// fastest. Immutable by convention once handed to another module; every
// operation in this library returns fresh tensors instead of mutating.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "nabla/errors.hpp"

namespace nabla {

constexpr int kMaxRank = 4;

inline int64_t checked_numel(const std::vector<int64_t>& shape) {
    if (shape.empty() || shape.size() > kMaxRank)
        throw ValidationError("tensor rank must be between 1 and 4, got " +
                              std::to_string(shape.size()));
    int64_t n = 1;
    for (int64_t e : shape) {
        if (e < 1) throw ValidationError("tensor extents must be >= 1");
        if (e > (int64_t(1) << 31) / n)
            throw ValidationError("tensor too large");
        n *= e;
    }
    return n;
}

struct Tensor {
    std::vector<int64_t> shape;
    std::vector<float> data;  // row-major, last axis fastest

    Tensor() = default;

    Tensor(std::vector<int64_t> shape_in, std::vector<float> data_in)
        : shape(std::move(shape_in)), data(std::move(data_in)) {
        if (checked_numel(shape) != int64_t(data.size()))
            throw ValidationError("tensor data length does not match shape");
    }

    static Tensor zeros(std::vector<int64_t> shape_in) {
        int64_t n = checked_numel(shape_in);
        return Tensor(std::move(shape_in), std::vector<float>(size_t(n), 0.0f));
    }

    int rank() const { return int(shape.size()); }
    int64_t numel() const { return int64_t(data.size()); }
    int64_t extent(int axis) const { return shape.at(size_t(axis)); }

    bool all_finite() const {
        for (float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    // Flat offset of [i, j] in a rank-2 tensor and [i, j, k] in rank-3.
    int64_t index2(int64_t i, int64_t j) const { return i * shape[1] + j; }
    int64_t index3(int64_t i, int64_t j, int64_t k) const {
        return (i * shape[1] + j) * shape[2] + k;
    }

    float& at2(int64_t i, int64_t j) { return data[size_t(index2(i, j))]; }
    float at2(int64_t i, int64_t j) const { return data[size_t(index2(i, j))]; }
    float& at3(int64_t i, int64_t j, int64_t k) { return data[size_t(index3(i, j, k))]; }
    float at3(int64_t i, int64_t j, int64_t k) const { return data[size_t(index3(i, j, k))]; }
};

inline bool equal(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape && a.data == b.data;
}

inline std::string shape_string(const Tensor& t) {
    std::string s = "[";
    for (size_t i = 0; i < t.shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(t.shape[i]);
    }
    return s + "]";
}

}  // namespace nabla
