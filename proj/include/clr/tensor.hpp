#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace clr {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major float array. Gradient bookkeeping lives in the Graph.
struct Tensor {
    Shape shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(Shape s);
    Tensor(Shape s, std::vector<float> values);

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor filled(Shape s, float value);
    static Tensor scalar(float value) { return Tensor({1}, {value}); }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    std::span<float> values() { return data; }
    std::span<const float> values() const { return data; }

    float item() const;
    bool all_finite() const;
};

} // namespace clr
