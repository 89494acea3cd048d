#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "swm/autodiff/tensor.hpp"

namespace swm::ad {

template <class T>
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t step = 0;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
};

/// One bias-corrected Adam update using each parameter's `grad` buffer.
/// Every gradient is checked before any parameter moves.
template <class T>
void adam_step(const std::vector<Tensor<T>*>& params, AdamState<T>& st) {
    if (!(st.lr > 0)) fail(ErrorCode::InvalidArgument, "Adam learning rate must be positive");
    for (std::size_t p = 0; p < params.size(); ++p) {
        const auto& t = *params[p];
        if (t.grad.size() != t.data.size()) {
            fail(ErrorCode::ShapeMismatch, "parameter " + std::to_string(p) + " has no gradient of matching size");
        }
        for (std::size_t i = 0; i < t.grad.size(); ++i) {
            if (!std::isfinite(t.grad[i])) {
                fail(ErrorCode::NonFinite, "non-finite gradient in parameter " + std::to_string(p) + " at element " + std::to_string(i));
            }
        }
    }
    if (st.m.empty()) {
        for (auto* t : params) {
            st.m.emplace_back(t->data.size(), T(0));
            st.v.emplace_back(t->data.size(), T(0));
        }
    }
    if (st.m.size() != params.size()) fail(ErrorCode::ShapeMismatch, "Adam state tracks a different parameter count");

    ++st.step;
    const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& t = *params[p];
        auto& m = st.m[p];
        auto& v = st.v[p];
        for (std::size_t i = 0; i < t.data.size(); ++i) {
            const double g = t.grad[i];
            m[i] = static_cast<T>(st.beta1 * m[i] + (1.0 - st.beta1) * g);
            v[i] = static_cast<T>(st.beta2 * v[i] + (1.0 - st.beta2) * g * g);
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            t.data[i] = static_cast<T>(t.data[i] - st.lr * mhat / (std::sqrt(vhat) + st.eps));
        }
    }
}

} // namespace swm::ad
