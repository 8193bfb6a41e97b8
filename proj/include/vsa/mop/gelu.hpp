#pragma once

#include <cmath>
#include <numbers>

namespace vsa::mop {

/// Exact GeLU, x * Phi(x), with Phi the standard normal CDF (erf form, not the tanh approximation).
inline double gelu(double x) noexcept
{
    return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 * 0.5));
}

/// d/dx [x * Phi(x)] = Phi(x) + x * phi(x)
inline double gelu_derivative(double x) noexcept
{
    const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 * 0.5));
    const double pdf = std::exp(-0.5 * x * x) * (std::numbers::inv_sqrtpi / std::numbers::sqrt2);
    return cdf + x * pdf;
}

} // namespace vsa::mop
