#ifndef TOBITIV_TRUNC_MOMENTS_HPP
#define TOBITIV_TRUNC_MOMENTS_HPP

#include <cstdint>
#include <span>
#include <vector>

namespace tobitiv {

/// Largest supported k + m for product moments.
inline constexpr int kMaxMomentOrder = 8;

struct UnivariateNormalSpec {
  double mu = 0.0;
  double sigma2 = 1.0;

  void validate() const;
};

struct BivariateNormalSpec {
  double mu1 = 0.0;
  double mu2 = 0.0;
  double sigma1_sq = 1.0;
  double sigma2_sq = 1.0;
  double sigma12 = 0.0;

  double rho() const;
  /// Throws a domain error unless the covariance is strictly positive definite.
  void validate() const;
  /// The same law with the coordinate labels exchanged.
  BivariateNormalSpec swapped() const;
};

/// Exponents of E[U1^k U2^m | U1 > 0, U2 > 0].
struct MomentQuery {
  int k = 0;
  int m = 0;

  void validate(int max_order = kMaxMomentOrder) const;
  friend bool operator==(const MomentQuery&, const MomentQuery&) = default;
};

/// E[U^k | U > 0] for U ~ N(mu, sigma2), by upward recursion from k = 0, 1.
double univariate_truncated_moment(const UnivariateNormalSpec& spec, int k,
                                   int max_order = kMaxMomentOrder);

/// All of E[U^j | U > 0] for j = 0..k.
std::vector<double> univariate_truncated_moments(const UnivariateNormalSpec& spec, int k,
                                                 int max_order = kMaxMomentOrder);

struct QuadMoment {
  double value = 0.0;
  double error = 0.0;  ///< estimated absolute error of `value`
};

/// Conditional moment of the positive-quadrant truncated bivariate normal by
/// nested adaptive Gauss–Kronrod quadrature.
double bivariate_truncated_moment_quad(const BivariateNormalSpec& spec, const MomentQuery& q,
                                       double tol);

/// Several conditional moments sharing one quadrature pass. The estimated
/// absolute error of every returned moment is at most `tol`.
std::vector<QuadMoment> bivariate_truncated_moments_quad(const BivariateNormalSpec& spec,
                                                         std::span<const MomentQuery> queries,
                                                         double tol);

/// Positive-quadrant probability P(U1 > 0, U2 > 0), from the same quadrature.
double positive_quadrant_probability(const BivariateNormalSpec& spec, double tol = 1e-12);

struct MonteCarloMoment {
  double estimate = 0.0;
  double std_error = 0.0;
  std::uint64_t accepted = 0;
  std::uint64_t draws = 0;
};

/// Rejection-sampling oracle. Deterministic given `seed`.
MonteCarloMoment bivariate_truncated_moment_mc(const BivariateNormalSpec& spec,
                                               const MomentQuery& q, std::uint64_t n_draws,
                                               std::uint64_t seed);

/// Left minus right side of the product-moment identity for the truncated
/// bivariate normal, each constituent moment evaluated by quadrature at tol/10:
///
///   E[U1^{k+1}U2^m - U1^k U2^{m+1}] - (mu1 - mu2) E[U1^k U2^m]
///     - (s1^2 - s12) k E[U1^{k-1} U2^m] + (s2^2 - s12) m E[U1^k U2^{m-1}]
///
/// Requires k >= 1 and m >= 1. |residual| <= 5 tol certifies the identity.
double proposition_residual(const BivariateNormalSpec& spec, const MomentQuery& q, double tol);

}  // namespace tobitiv

#endif  // TOBITIV_TRUNC_MOMENTS_HPP
