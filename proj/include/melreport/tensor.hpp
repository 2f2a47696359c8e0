#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "melreport/errors.hpp"

namespace melreport {

// Dense row-major matrix. Vectors are 1×n, scalars 1×1.
template <class T>
struct Tensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;

    Tensor() = default;
    Tensor(std::size_t r, std::size_t c, T fill = T{0}) : rows(r), cols(c), data(r * c, fill) {}
    Tensor(std::size_t r, std::size_t c, std::vector<T> values) : rows(r), cols(c), data(std::move(values))
    {
        if (data.size() != r * c) {
            throw ShapeError("tensor: data length " + std::to_string(data.size()) + " does not match shape " +
                             std::to_string(r) + "x" + std::to_string(c));
        }
    }

    [[nodiscard]] std::size_t size() const noexcept { return data.size(); }
    [[nodiscard]] bool empty() const noexcept { return data.empty(); }

    T& operator()(std::size_t r, std::size_t c) noexcept { return data[r * cols + c]; }
    const T& operator()(std::size_t r, std::size_t c) const noexcept { return data[r * cols + c]; }

    std::span<T> row(std::size_t r) noexcept { return {data.data() + r * cols, cols}; }
    std::span<const T> row(std::size_t r) const noexcept { return {data.data() + r * cols, cols}; }

    template <class U>
    [[nodiscard]] Tensor<U> cast() const
    {
        Tensor<U> out(rows, cols);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }

    [[nodiscard]] std::string shape_str() const { return std::to_string(rows) + "x" + std::to_string(cols); }

    bool operator==(const Tensor&) const = default;
};

}  // namespace melreport
