#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mambaloc/tensor.hpp"

namespace mambaloc {

/// Relative error with a unit floor in the denominator, so values near
/// zero compare absolutely instead of blowing up.
inline double relative_error(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

/// Central-difference check of reverse-mode gradients for one tensor.
/// `f` must be a pure scalar function of the current parameter values;
/// it is re-evaluated forward-only while coordinates are wiggled.
/// Returns the max relative error over all coordinates of `param`.
inline double grad_check(const std::function<Tensor<double>()>& f, Tensor<double>& param,
                         double h) {
    if (h <= 0.0) throw ValueError("grad_check: step h must be positive");
    param.set_requires_grad(true);
    param.zero_grad();
    {
        TapeScope<double> scope;
        Tensor<double> loss = f();
        scope.tape().backward(loss);
    }
    std::vector<double> analytic = param.grad();
    if (analytic.empty()) analytic.assign(param.numel(), 0.0);

    double max_err = 0.0;
    auto& data = param.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double saved = data[i];
        data[i] = saved + h;
        const double up = f().item();
        data[i] = saved - h;
        const double down = f().item();
        data[i] = saved;
        const double fd = (up - down) / (2.0 * h);
        max_err = std::max(max_err, relative_error(analytic[i], fd));
    }
    return max_err;
}

/// Worst-case grad_check over every tensor in a registry.
inline double grad_check_all(const std::function<Tensor<double>()>& f,
                             ParamRegistry<double>& params, double h) {
    double max_err = 0.0;
    for (auto& p : params) {
        max_err = std::max(max_err, grad_check(f, p.value, h));
    }
    return max_err;
}

} // namespace mambaloc
