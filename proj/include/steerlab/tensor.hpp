#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "steerlab/errors.hpp"

namespace steerlab {

// Dense row-major 2-D float32 matrix. Every activation and weight in the engine
// is one of these; vectors are stored as 1 x n.
class Tensor {
public:
    Tensor() = default;
    Tensor(int rows, int cols) : rows_(rows), cols_(cols), data_(size_t(rows) * size_t(cols), 0.0f) {}
    Tensor(int rows, int cols, std::vector<float> data) : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != size_t(rows) * size_t(cols)) {
            throw ShapeMismatch("tensor data length does not match shape");
        }
    }

    static Tensor row_vector(std::vector<float> data) {
        const int n = static_cast<int>(data.size());
        return Tensor(1, n, std::move(data));
    }

    int rows() const noexcept { return rows_; }
    int cols() const noexcept { return cols_; }
    size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    float* data() noexcept { return data_.data(); }
    const float* data() const noexcept { return data_.data(); }

    std::span<float> row(int r) noexcept { return {data_.data() + size_t(r) * size_t(cols_), size_t(cols_)}; }
    std::span<const float> row(int r) const noexcept {
        return {data_.data() + size_t(r) * size_t(cols_), size_t(cols_)};
    }

    float& at(int r, int c) noexcept { return data_[size_t(r) * size_t(cols_) + size_t(c)]; }
    float at(int r, int c) const noexcept { return data_[size_t(r) * size_t(cols_) + size_t(c)]; }

    std::span<const float> flat() const noexcept { return data_; }
    std::span<float> flat() noexcept { return data_; }
    const std::vector<float>& values() const noexcept { return data_; }

    bool operator==(const Tensor& other) const = default;

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<float> data_;
};

}  // namespace steerlab
