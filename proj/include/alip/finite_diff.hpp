#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "alip/error.hpp"
#include "alip/tensor.hpp"

namespace alip {

// Central finite differences. Deliberately independent of the tape: the
// callback is evaluated as a plain function of the perturbed buffer, so this
// acts as an oracle for backward().

inline constexpr double kFdStep = 1e-5;

// d f / d x[i] ~ (f(x + h e_i) - f(x - h e_i)) / 2h, evaluated directly on a
// parameter buffer. `f` must read the buffer fresh on every call.
inline std::vector<double> finite_difference_grad(const std::function<double()>& f,
                                                  std::vector<double>& params,
                                                  double h = kFdStep) {
    std::vector<double> grad(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        double saved = params[i];
        params[i] = saved + h;
        double fp = f();
        params[i] = saved - h;
        double fm = f();
        params[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw DomainError("finite_difference_grad: non-finite evaluation at coordinate " +
                              std::to_string(i));
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

// Convenience wrapper perturbing a tensor's storage in place.
inline std::vector<double> finite_difference_grad(const std::function<double()>& f, Tensor& x,
                                                  double h = kFdStep) {
    return finite_difference_grad(f, x.data(), h);
}

// Relative error between an analytic and a numeric gradient entry. The
// denominator is floored at 1e-4 so that near-zero gradients are compared at
// an absolute tolerance of tol * 1e-4, which sits well above the ~1e-9 noise
// floor of central differences at h = 1e-5 but still catches real defects.
inline double grad_rel_err(double analytic, double numeric) {
    double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-4});
    return std::fabs(analytic - numeric) / denom;
}

inline double max_grad_rel_err(const std::vector<double>& analytic,
                               const std::vector<double>& numeric) {
    if (analytic.size() != numeric.size()) {
        throw ShapeError("max_grad_rel_err: length mismatch " + std::to_string(analytic.size()) +
                         " vs " + std::to_string(numeric.size()));
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        worst = std::max(worst, grad_rel_err(analytic[i], numeric[i]));
    }
    return worst;
}

}  // namespace alip
