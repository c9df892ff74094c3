#include "doctest.h"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "tobitiv/errors.hpp"
#include "tobitiv/trunc_moments.hpp"

using namespace tobitiv;

namespace {

// Independent 1D oracle: Boost's Gauss-Kronrod over (0, inf).
double univariate_quadrature_oracle(double mu, double sigma2, int k) {
  const double sd = std::sqrt(sigma2);
  auto dens = [&](double u) {
    return std::exp(-0.5 * (u - mu) * (u - mu) / sigma2) / (sd * std::sqrt(2 * std::numbers::pi));
  };
  using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
  const double hi = std::max(mu, 0.0) + 20.0 * sd;
  const double num = GK::integrate([&](double u) { return std::pow(u, k) * dens(u); }, 0.0, hi, 12, 1e-14);
  const double den = GK::integrate(dens, 0.0, hi, 12, 1e-14);
  return num / den;
}

struct Grid {
  std::vector<BivariateNormalSpec> points;
};

// |mu_i| <= 2, sigma_i^2 in [0.25, 4], |rho| <= 0.9.
Grid random_grid(int n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> mu(-2.0, 2.0), var(0.25, 4.0), rho(-0.9, 0.9);
  Grid g;
  for (int i = 0; i < n; ++i) {
    BivariateNormalSpec s;
    s.mu1 = mu(gen);
    s.mu2 = mu(gen);
    s.sigma1_sq = var(gen);
    s.sigma2_sq = var(gen);
    s.sigma12 = rho(gen) * std::sqrt(s.sigma1_sq * s.sigma2_sq);
    g.points.push_back(s);
  }
  return g;
}

}  // namespace

TEST_CASE("univariate recursion: base cases and frozen oracle values") {
  CHECK(univariate_truncated_moment({0.0, 1.0}, 0) == 1.0);
  CHECK(univariate_truncated_moment({0.0, 1.0}, 2) == doctest::Approx(1.0).epsilon(1e-14));
  // sqrt(2/pi), via 40-digit quadrature.
  CHECK(std::abs(univariate_truncated_moment({0.0, 1.0}, 1) - 0.797884560803) < 1e-9);
  CHECK(std::abs(univariate_truncated_moment({0.0, 1.0}, 1) - 0.79788456080286535588) < 1e-15);
  // 40-digit quadrature values.
  CHECK(std::abs(univariate_truncated_moment({2.0, 0.25}, 3) - 9.5003011275450542941) < 1e-12);
  CHECK(std::abs(univariate_truncated_moment({-1.5, 2.0}, 4) - 3.1620713508548924464) < 1e-11);
  CHECK(std::abs(univariate_truncated_moment({0.3, 0.5}, 5) - 2.1989366913203604138) < 1e-12);
}

TEST_CASE("univariate recursion matches independent quadrature on the grid") {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> mu(-2.0, 2.0), var(0.25, 4.0);
  for (int i = 0; i < 30; ++i) {
    const double m = mu(gen), v = var(gen);
    for (int k = 0; k <= 5; ++k) {
      CHECK(std::abs(univariate_truncated_moment({m, v}, k) - univariate_quadrature_oracle(m, v, k)) < 1e-8);
    }
  }
}

TEST_CASE("univariate errors") {
  CHECK_THROWS_AS(univariate_truncated_moment({0.0, 0.0}, 1), Error);
  CHECK_THROWS_AS(univariate_truncated_moment({std::nan(""), 1.0}, 1), Error);
  try {
    univariate_truncated_moment({0.0, 1.0}, 9);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::UnsupportedOrder);
  }
}

TEST_CASE("bivariate quadrature: normalization and independence") {
  const BivariateNormalSpec std_normal{0, 0, 1, 1, 0};
  CHECK(bivariate_truncated_moment_quad({0.3, -0.4, 2.0, 0.5, 0.6}, {0, 0}, 1e-9) == 1.0);
  CHECK(std::abs(bivariate_truncated_moment_quad(std_normal, {1, 1}, 1e-9) - 2.0 / std::numbers::pi) < 1e-6);
  CHECK(std::abs(bivariate_truncated_moment_quad(std_normal, {1, 1}, 1e-10) - 0.63661977236758134308) < 1e-9);

  // Frozen value from two independent high-precision integrations.
  const BivariateNormalSpec corr{0.5, 0.0, 1.0, 1.0, 0.3};
  CHECK(std::abs(bivariate_truncated_moment_quad(corr, {2, 1}, 1e-10) - 1.6718158430260685) < 1e-9);

  for (const auto& s : random_grid(15, 3).points) {
    BivariateNormalSpec indep = s;
    indep.sigma12 = 0.0;
    for (int k = 0; k <= 3; ++k) {
      for (int m = 0; m <= 3; ++m) {
        const double product = univariate_truncated_moment({s.mu1, s.sigma1_sq}, k) *
                               univariate_truncated_moment({s.mu2, s.sigma2_sq}, m);
        CHECK(std::abs(bivariate_truncated_moment_quad(indep, {k, m}, 1e-9) - product) < 1e-7);
      }
    }
  }
}

TEST_CASE("bivariate quadrature: exchangeability to 1e-10") {
  for (const auto& s : random_grid(10, 5).points) {
    for (int k = 0; k <= 3; ++k) {
      for (int m = 0; m <= 3; ++m) {
        const double a = bivariate_truncated_moment_quad(s, {k, m}, 1e-12);
        const double b = bivariate_truncated_moment_quad(s.swapped(), {m, k}, 1e-12);
        CHECK(std::abs(a - b) < 1e-10);
      }
    }
  }
}

TEST_CASE("bivariate quadrature: even moments grow with variance") {
  for (double mu : {-1.0, 0.0, 1.5}) {
    double prev = 0.0;
    for (double v : {0.25, 0.5, 1.0, 2.0, 4.0}) {
      const double cur = bivariate_truncated_moment_quad({mu, mu, v, v, 0.3 * v}, {2, 2}, 1e-9);
      CHECK(cur > prev);
      prev = cur;
    }
  }
}

TEST_CASE("bivariate quadrature errors") {
  CHECK_THROWS_AS(bivariate_truncated_moment_quad({0, 0, 1, 1, 1.0}, {1, 1}, 1e-7), Error);
  CHECK_THROWS_AS(bivariate_truncated_moment_quad({0, 0, 1, 1, 0}, {5, 4}, 1e-7), Error);
  CHECK_THROWS_AS(bivariate_truncated_moment_quad({0, 0, 1, 1, 0}, {1, 1}, 0.0), Error);
}

TEST_CASE("Monte Carlo oracle") {
  const BivariateNormalSpec std_normal{0, 0, 1, 1, 0};
  SUBCASE("constant integrand is exact") {
    const auto r = bivariate_truncated_moment_mc(std_normal, {0, 0}, 1'000'000, 9);
    CHECK(r.estimate == 1.0);
    CHECK(r.std_error == 0.0);
  }
  SUBCASE("deterministic given seed") {
    const auto a = bivariate_truncated_moment_mc(std_normal, {1, 2}, 10'000, 4);
    const auto b = bivariate_truncated_moment_mc(std_normal, {1, 2}, 10'000, 4);
    CHECK(a.estimate == b.estimate);
    CHECK(a.std_error == b.std_error);
  }
  SUBCASE("exchangeable coordinates") {
    const BivariateNormalSpec sym{0.4, 0.4, 1.3, 1.3, -0.5};
    const auto a = bivariate_truncated_moment_mc(sym, {1, 2}, 200'000, 21);
    const auto b = bivariate_truncated_moment_mc(sym, {2, 1}, 200'000, 21);
    CHECK(std::abs(a.estimate - b.estimate) < 4 * std::hypot(a.std_error, b.std_error));
    CHECK(std::abs(bivariate_truncated_moment_quad(sym, {1, 2}, 1e-10) -
                   bivariate_truncated_moment_quad(sym, {2, 1}, 1e-10)) < 1e-9);
  }
  SUBCASE("agrees with quadrature") {
    const BivariateNormalSpec corr{0.5, 0.0, 1.0, 1.0, 0.3};
    const auto mc = bivariate_truncated_moment_mc(corr, {2, 1}, 2'000'000, 17);
    const double q = bivariate_truncated_moment_quad(corr, {2, 1}, 1e-9);
    CHECK(std::abs(mc.estimate - q) < 4 * mc.std_error);
  }
  SUBCASE("too few accepted draws") {
    try {
      bivariate_truncated_moment_mc({-4, -4, 1, 1, 0}, {1, 1}, 1000, 1);
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::InsufficientAcceptance);
    }
  }
  CHECK_THROWS_AS(bivariate_truncated_moment_mc(std_normal, {1, 1}, 999, 1), Error);
}

TEST_CASE("product-moment identity residual") {
  CHECK(std::abs(proposition_residual({0, 0, 1, 1, 0}, {1, 1}, 1e-8)) < 5e-8);
  CHECK(std::abs(proposition_residual({0.3, 0.3, 2.0, 2.0, 0.7}, {1, 1}, 1e-8)) < 1e-9);
  CHECK(std::abs(proposition_residual({0.7, -0.2, 1.5, 0.8, 0.4}, {2, 1}, 1e-7)) < 1e-6);

  for (const auto& s : random_grid(6, 8).points) {
    for (int k = 1; k <= 3; ++k) {
      for (int m = 1; m <= 3; ++m) {
        CHECK(std::abs(proposition_residual(s, {k, m}, 1e-7)) < 1e-6);
      }
    }
  }

  CHECK_THROWS_AS(proposition_residual({0, 0, 1, 1, 0}, {0, 1}, 1e-7), Error);
  CHECK_THROWS_AS(proposition_residual({0, 0, 1, 1, 0}, {4, 4}, 1e-7), Error);
}

TEST_CASE("the identity is not vacuous: a wrong coefficient leaves a visible residual") {
  // Same combination with the (mu1 - mu2) term dropped.
  const BivariateNormalSpec s{0.7, -0.2, 1.5, 0.8, 0.4};
  const double with = proposition_residual(s, {2, 1}, 1e-8);
  const double moment = bivariate_truncated_moment_quad(s, {2, 1}, 1e-9);
  CHECK(std::abs(with + (s.mu1 - s.mu2) * moment) > 0.5);
}
