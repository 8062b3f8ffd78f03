#include "clr/tensor.hpp"

#include <cmath>
#include <sstream>

#include "clr/error.hpp"

namespace clr {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0f) {
    for (auto d : shape)
        if (d == 0) throw ConfigError("tensor shape " + shape_str(shape) + " has a zero extent");
}

Tensor::Tensor(Shape s, std::vector<float> values) : shape(std::move(s)), data(std::move(values)) {
    if (shape_numel(shape) != data.size())
        throw ConfigError("tensor shape " + shape_str(shape) + " does not match " +
                          std::to_string(data.size()) + " values");
}

Tensor Tensor::filled(Shape s, float value) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
}

float Tensor::item() const {
    if (data.size() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape));
    return data[0];
}

bool Tensor::all_finite() const {
    for (float v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

} // namespace clr
