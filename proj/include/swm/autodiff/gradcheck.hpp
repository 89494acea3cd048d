#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "swm/autodiff/graph.hpp"

namespace swm::ad {

struct GradCheckReport {
    double max_rel_error = 0;
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0;
    double worst_numeric = 0;
    std::size_t checked = 0;
    /// (parameter, element) pairs whose perturbation moved a piecewise-linear
    /// activation across its kink; excluded from max_rel_error.
    std::vector<std::pair<std::size_t, std::size_t>> kinks;
};

struct GradCheckOptions {
    double eps = 1e-5;
    /// 0 checks every element; otherwise an evenly spaced subset per tensor.
    std::size_t max_per_tensor = 0;
};

/// Central-difference check of reverse-mode gradients, 64-bit only.
/// `build` records the loss on a fresh graph: Var<double> build(Graph<double>&, std::vector<Var<double>>& params).
/// Relative error is |a - n| / max(|a|, |n|, 1e-8).
template <class Build>
GradCheckReport grad_check(Build&& build, const std::vector<Tensor<double>*>& params, GradCheckOptions opt = {}) {
    if (!(opt.eps >= 1e-6 && opt.eps <= 1e-4)) fail(ErrorCode::InvalidArgument, "grad_check eps must lie in [1e-6, 1e-4]");

    auto evaluate = [&](bool with_backward, std::uint64_t& signature) {
        Graph<double> g;
        std::vector<Var<double>> vars;
        vars.reserve(params.size());
        for (auto* p : params) vars.push_back(g.param(*p));
        Var<double> loss = build(g, vars);
        if (with_backward) g.backward(loss);
        signature = g.kink_signature();
        return loss.value()[0];
    };

    std::uint64_t base_sig = 0;
    const double base = evaluate(true, base_sig);
    if (!std::isfinite(base)) fail(ErrorCode::NonFinite, "loss is non-finite at the unperturbed point");
    std::vector<std::vector<double>> analytic;
    for (auto* p : params) analytic.push_back(p->grad);

    GradCheckReport report;
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& data = params[p]->data;
        const std::size_t n = data.size();
        const std::size_t count = opt.max_per_tensor == 0 ? n : std::min(n, opt.max_per_tensor);
        for (std::size_t k = 0; k < count; ++k) {
            const std::size_t i = count == n ? k : (k * n) / count;
            const double saved = data[i];
            std::uint64_t sig_plus = 0, sig_minus = 0;
            data[i] = saved + opt.eps;
            const double fp = evaluate(false, sig_plus);
            data[i] = saved - opt.eps;
            const double fm = evaluate(false, sig_minus);
            data[i] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(analytic[p][i])) {
                fail(ErrorCode::NonFinite, "non-finite value while checking parameter " + std::to_string(p) + " element " + std::to_string(i));
            }
            if (sig_plus != base_sig || sig_minus != base_sig) {
                report.kinks.emplace_back(p, i);
                continue;
            }
            const double numeric = (fp - fm) / (2 * opt.eps);
            const double a = analytic[p][i];
            const double rel = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), 1e-8});
            ++report.checked;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_param = p;
                report.worst_index = i;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    for (std::size_t p = 0; p < params.size(); ++p) params[p]->grad = analytic[p];
    return report;
}

} // namespace swm::ad
