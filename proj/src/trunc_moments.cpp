#include "tobitiv/trunc_moments.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "tobitiv/errors.hpp"
#include "tobitiv/normal.hpp"
#include "tobitiv/quadrature.hpp"
#include "tobitiv/rng.hpp"

namespace tobitiv {

namespace {

// Mean +/- 10 sd leaves less than 1e-23 of normal mass outside.
constexpr double kTailWidth = 10.0;

bool finite(double v) { return std::isfinite(v); }

}  // namespace

void UnivariateNormalSpec::validate() const {
  if (!finite(mu) || !finite(sigma2) || !(sigma2 > 0.0)) {
    throw Error(ErrorKind::Domain, "univariate normal spec requires finite mu and sigma2 > 0");
  }
}

double BivariateNormalSpec::rho() const { return sigma12 / std::sqrt(sigma1_sq * sigma2_sq); }

void BivariateNormalSpec::validate() const {
  if (!finite(mu1) || !finite(mu2) || !finite(sigma1_sq) || !finite(sigma2_sq) ||
      !finite(sigma12)) {
    throw Error(ErrorKind::Domain, "bivariate normal spec has non-finite fields");
  }
  if (!(sigma1_sq > 0.0) || !(sigma2_sq > 0.0)) {
    throw Error(ErrorKind::Domain, "bivariate normal spec requires positive variances");
  }
  if (!(sigma12 * sigma12 < sigma1_sq * sigma2_sq)) {
    throw Error(ErrorKind::Domain, "bivariate normal covariance is not positive definite (|rho| >= 1)");
  }
}

BivariateNormalSpec BivariateNormalSpec::swapped() const {
  return {mu2, mu1, sigma2_sq, sigma1_sq, sigma12};
}

void MomentQuery::validate(int max_order) const {
  if (k < 0 || m < 0) throw Error(ErrorKind::Domain, "moment exponents must be non-negative");
  if (k + m > max_order) {
    throw Error(ErrorKind::UnsupportedOrder, "moment order k + m = " + std::to_string(k + m) +
                                                 " exceeds the supported maximum " +
                                                 std::to_string(max_order));
  }
}

std::vector<double> univariate_truncated_moments(const UnivariateNormalSpec& spec, int k,
                                                 int max_order) {
  spec.validate();
  if (k < 0) throw Error(ErrorKind::Domain, "moment order must be non-negative");
  if (k > max_order) {
    throw Error(ErrorKind::UnsupportedOrder,
                "moment order " + std::to_string(k) + " exceeds " + std::to_string(max_order));
  }

  using Wide = long double;
  const Wide mu = spec.mu;
  const Wide var = spec.sigma2;
  const Wide sd = std::sqrt(var);

  std::vector<Wide> m(static_cast<std::size_t>(std::max(k, 1)) + 1);
  m[0] = 1;
  m[1] = mu + sd * inverse_mills<Wide>(mu / sd);
  // E[U^{j+1}|U>0] = mu E[U^j|U>0] + sigma^2 j E[U^{j-1}|U>0]
  for (int j = 1; j < k; ++j) {
    m[j + 1] = mu * m[j] + var * Wide(j) * m[j - 1];
  }

  std::vector<double> out(static_cast<std::size_t>(k) + 1);
  for (int j = 0; j <= k; ++j) out[j] = static_cast<double>(m[j]);
  return out;
}

double univariate_truncated_moment(const UnivariateNormalSpec& spec, int k, int max_order) {
  return univariate_truncated_moments(spec, k, max_order).back();
}

namespace {

using quad::Array;

struct QuadrantIntegrals {
  Array<double> value;  // [0] = quadrant probability, then one numerator per query
  Array<double> error;
};

QuadrantIntegrals integrate_quadrant(const BivariateNormalSpec& spec,
                                     std::span<const MomentQuery> queries, double tol) {
  spec.validate();
  if (!(tol > 0.0) || !finite(tol)) throw Error(ErrorKind::Domain, "tolerance must be positive");
  int max_m = 0;
  for (const auto& q : queries) {
    q.validate();
    max_m = std::max(max_m, q.m);
  }

  const double sd1 = std::sqrt(spec.sigma1_sq);
  const double slope = spec.sigma12 / spec.sigma1_sq;
  const double cond_sd = std::sqrt(spec.sigma2_sq - spec.sigma12 * slope);
  const double lo1 = std::max(0.0, spec.mu1 - kTailWidth * sd1);
  const double hi1 = spec.mu1 + kTailWidth * sd1;
  const double sd2 = std::sqrt(spec.sigma2_sq);
  if (!(hi1 > 0.0) || !(spec.mu2 + kTailWidth * sd2 > 0.0)) {
    throw Error(ErrorKind::Domain, "positive quadrant has negligible probability under this spec");
  }

  const Eigen::Index inner_dim = max_m + 1;
  const Eigen::Index dim = static_cast<Eigen::Index>(queries.size()) + 1;
  const double inner_target = std::max(1e-15, tol * 1e-4);

  // u2 | u1 ~ N(mu2 + slope (u1 - mu1), cond_sd^2); returns int_0^inf u2^j phi du2, j = 0..max_m.
  auto inner = [&](double u1) -> quad::Sample<double> {
    const double cm = spec.mu2 + slope * (u1 - spec.mu1);
    const double lo = std::max(0.0, cm - kTailWidth * cond_sd);
    const double hi = cm + kTailWidth * cond_sd;
    if (!(hi > lo)) return {Array<double>::Zero(inner_dim), Array<double>::Zero(inner_dim)};
    auto powers = [&](double u2) -> quad::Sample<double> {
      Array<double> v(inner_dim);
      v[0] = normal_pdf(u2, cm, cond_sd);
      for (Eigen::Index j = 1; j < inner_dim; ++j) v[j] = v[j - 1] * u2;
      return {std::move(v), {}};
    };
    auto r = quad::integrate<double>(powers, lo, hi, inner_dim,
                                     quad::max_relative_error<double>, inner_target);
    return {std::move(r.value), std::move(r.error)};
  };

  auto outer = [&](double u1) -> quad::Sample<double> {
    const quad::Sample<double> in = inner(u1);
    const double dens = normal_pdf(u1, spec.mu1, sd1);
    Array<double> v(dim), e(dim);
    v[0] = dens * in.value[0];
    e[0] = dens * in.error[0];
    for (std::size_t i = 0; i < queries.size(); ++i) {
      const double w = dens * std::pow(u1, queries[i].k);
      v[i + 1] = w * in.value[queries[i].m];
      e[i + 1] = w * in.error[queries[i].m];
    }
    return {std::move(v), std::move(e)};
  };

  // Error of each ratio N_c / P, linearized: (e_c + |N_c / P| e_P) / P.
  auto ratio_error = [](const Array<double>& total, const Array<double>& err) {
    const double p = total[0];
    if (!(p > 0.0)) return std::numeric_limits<double>::infinity();
    double worst = err[0] / p;
    for (Eigen::Index c = 1; c < total.size(); ++c) {
      worst = std::max(worst, (err[c] + std::abs(total[c] / p) * err[0]) / p);
    }
    return worst;
  };

  auto r = quad::integrate<double>(outer, lo1, hi1, dim, ratio_error, tol);
  return {std::move(r.value), std::move(r.error)};
}

}  // namespace

std::vector<QuadMoment> bivariate_truncated_moments_quad(const BivariateNormalSpec& spec,
                                                         std::span<const MomentQuery> queries,
                                                         double tol) {
  const QuadrantIntegrals q = integrate_quadrant(spec, queries, tol);
  const double p = q.value[0];
  std::vector<QuadMoment> out;
  out.reserve(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i) + 1;
    const double value = q.value[c] / p;
    out.push_back({value, (q.error[c] + std::abs(value) * q.error[0]) / p});
  }
  return out;
}

double bivariate_truncated_moment_quad(const BivariateNormalSpec& spec, const MomentQuery& q,
                                       double tol) {
  return bivariate_truncated_moments_quad(spec, std::span(&q, 1), tol).front().value;
}

double positive_quadrant_probability(const BivariateNormalSpec& spec, double tol) {
  return integrate_quadrant(spec, {}, tol).value[0];
}

MonteCarloMoment bivariate_truncated_moment_mc(const BivariateNormalSpec& spec,
                                               const MomentQuery& q, std::uint64_t n_draws,
                                               std::uint64_t seed) {
  spec.validate();
  q.validate();
  if (n_draws < 1000) throw Error(ErrorKind::Domain, "Monte Carlo oracle needs at least 1000 draws");

  const double sd1 = std::sqrt(spec.sigma1_sq);
  const double slope = spec.sigma12 / spec.sigma1_sq;
  const double cond_sd = std::sqrt(spec.sigma2_sq - spec.sigma12 * slope);

  CounterRng rng(seed);
  std::normal_distribution<double> normal;

  // Welford accumulation over accepted draws.
  std::uint64_t accepted = 0;
  double mean = 0.0;
  double m2 = 0.0;
  for (std::uint64_t n = 0; n < n_draws; ++n) {
    const double u1 = spec.mu1 + sd1 * normal(rng);
    const double u2 = spec.mu2 + slope * (u1 - spec.mu1) + cond_sd * normal(rng);
    if (!(u1 > 0.0 && u2 > 0.0)) continue;
    const double v = std::pow(u1, q.k) * std::pow(u2, q.m);
    ++accepted;
    const double delta = v - mean;
    mean += delta / static_cast<double>(accepted);
    m2 += delta * (v - mean);
  }

  if (accepted < 100) {
    throw Error(ErrorKind::InsufficientAcceptance,
                "only " + std::to_string(accepted) + " of " + std::to_string(n_draws) +
                    " draws fell in the positive quadrant (acceptance rate " +
                    std::to_string(static_cast<double>(accepted) / static_cast<double>(n_draws)) +
                    ")");
  }
  const auto n_acc = static_cast<double>(accepted);
  const double variance = m2 / (n_acc - 1.0);
  return {mean, std::sqrt(variance / n_acc), accepted, n_draws};
}

double proposition_residual(const BivariateNormalSpec& spec, const MomentQuery& q, double tol) {
  if (q.k < 1 || q.m < 1) {
    throw Error(ErrorKind::Domain, "the product-moment identity is stated for k >= 1 and m >= 1");
  }
  MomentQuery{q.k + 1, q.m}.validate();

  const std::array<MomentQuery, 5> parts = {{
      {q.k + 1, q.m},
      {q.k, q.m + 1},
      {q.k, q.m},
      {q.k - 1, q.m},
      {q.k, q.m - 1},
  }};
  const auto e = bivariate_truncated_moments_quad(spec, parts, tol / 10.0);

  return (e[0].value - e[1].value) - (spec.mu1 - spec.mu2) * e[2].value -
         (spec.sigma1_sq - spec.sigma12) * q.k * e[3].value +
         (spec.sigma2_sq - spec.sigma12) * q.m * e[4].value;
}

}  // namespace tobitiv
