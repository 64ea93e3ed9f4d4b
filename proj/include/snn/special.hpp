#pragma once

#include <cmath>
#include <concepts>
#include <numbers>
#include <stdexcept>
#include <string>

namespace snn {

namespace detail {
template <std::floating_point Scalar>
void require_finite(Scalar x, const char* fn) {
  if (!std::isfinite(x)) throw std::invalid_argument(std::string(fn) + ": non-finite argument");
}
}  // namespace detail

/// Gaussian error function. Backed by the C library erf, which is accurate to
/// a few ulp on the whole real line.
template <std::floating_point Scalar>
Scalar erf(Scalar x) {
  detail::require_finite(x, "erf");
  return std::erf(x);
}

/// Standard normal CDF, Phi(x) = (1 + erf(x / sqrt 2)) / 2. Uses erfc on the
/// lower tail so Phi(x) + Phi(-x) = 1 holds to rounding.
template <std::floating_point Scalar>
Scalar std_normal_cdf(Scalar x) {
  detail::require_finite(x, "std_normal_cdf");
  return Scalar(0.5) * std::erfc(-x / std::numbers::sqrt2_v<Scalar>);
}

template <std::floating_point Scalar>
Scalar std_normal_pdf(Scalar x) {
  detail::require_finite(x, "std_normal_pdf");
  return std::numbers::inv_sqrtpi_v<Scalar> / std::numbers::sqrt2_v<Scalar> *
         std::exp(Scalar(-0.5) * x * x);
}

}  // namespace snn
