#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "swm/error.hpp"

namespace swm::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
}

/// Dense row-major array. `grad` is sized to match `data` once the tensor
/// takes part in a backward pass as a parameter.
template <class T>
struct Tensor {
    Shape shape;
    std::vector<T> data;
    bool requires_grad = false;
    std::vector<T> grad;

    Tensor() = default;
    explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(numel(shape), fill) {}
    Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
        if (data.size() != numel(shape)) {
            fail(ErrorCode::ShapeMismatch, "tensor data length " + std::to_string(data.size()) + " does not fit shape " + shape_str(shape));
        }
    }

    std::size_t size() const { return data.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }
    std::size_t rank() const { return shape.size(); }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    void zero_grad() { grad.assign(data.size(), T(0)); }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out(shape);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        out.requires_grad = requires_grad;
        return out;
    }

    bool all_finite() const {
        for (const auto& v : data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }
};

template <class T>
bool same_values(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape == b.shape && a.data == b.data;
}

template <class T, class Rng>
Tensor<T> uniform(Shape shape, T lo, T hi, Rng& rng) {
    Tensor<T> t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.data) v = static_cast<T>(dist(rng));
    return t;
}

} // namespace swm::ad
