#pragma once

#include <cmath>
#include <functional>
#include <utility>

#include "advseq/matrix.hpp"

namespace advseq {

/// A scalar objective that can report its value and its analytic gradient at
/// a parameter vector. The checker only uses the value at perturbed points,
/// so the analytic path is exercised exactly once.
using DifferentiableScalar = std::function<std::pair<double, Vector>(const Vector&)>;

/// Central finite differences at step eps against the analytic gradient.
/// Returns max over coordinates of
///   |analytic - central| / max(1e-8, |analytic| + |central|).
inline double grad_check(const DifferentiableScalar& f, const Vector& theta0,
                         double eps = 1e-5) {
    auto [value0, analytic] = f(theta0);
    if (!std::isfinite(value0) || !all_finite(analytic))
        throw NumericError("grad_check: non-finite objective or gradient");
    double worst = 0.0;
    Vector theta = theta0;
    for (std::size_t i = 0; i < theta0.size(); ++i) {
        theta[i] = theta0[i] + eps;
        const double up = f(theta).first;
        theta[i] = theta0[i] - eps;
        const double down = f(theta).first;
        theta[i] = theta0[i];
        if (!std::isfinite(up) || !std::isfinite(down))
            throw NumericError("grad_check: non-finite objective at perturbation");
        const double central = (up - down) / (2.0 * eps);
        const double denom = std::max(1e-8, std::fabs(analytic[i]) + std::fabs(central));
        worst = std::max(worst, std::fabs(analytic[i] - central) / denom);
    }
    return worst;
}

}  // namespace advseq
