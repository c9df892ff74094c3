#ifndef TOBITIV_NORMAL_HPP
#define TOBITIV_NORMAL_HPP

#include <cmath>
#include <numbers>

namespace tobitiv {

template <typename Scalar>
Scalar normal_pdf(Scalar x) {
  return std::exp(Scalar(-0.5) * x * x) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
}

template <typename Scalar>
Scalar normal_pdf(Scalar x, Scalar mean, Scalar sd) {
  return normal_pdf<Scalar>((x - mean) / sd) / sd;
}

// Phi(x) through erfc, which keeps full relative accuracy in the lower tail.
template <typename Scalar>
Scalar normal_cdf(Scalar x) {
  return Scalar(0.5) * std::erfc(-x / std::numbers::sqrt2_v<Scalar>);
}

// phi(x) / Phi(x); the inverse Mills ratio of a lower-truncated normal.
template <typename Scalar>
Scalar inverse_mills(Scalar x) {
  return normal_pdf(x) / normal_cdf(x);
}

}  // namespace tobitiv

#endif  // TOBITIV_NORMAL_HPP
