#ifndef TOBITIV_QUADRATURE_HPP
#define TOBITIV_QUADRATURE_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "tobitiv/errors.hpp"

namespace tobitiv::quad {

template <typename Scalar>
using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

/// Integrand output at one abscissa. `error` carries any error already
/// present in `value` (e.g. from a nested integral) and may be left empty.
template <typename Scalar>
struct Sample {
  Array<Scalar> value;
  Array<Scalar> error;
};

template <typename Scalar>
struct Result {
  Array<Scalar> value;
  Array<Scalar> error;
  int intervals = 0;
  int evaluations = 0;
};

namespace detail {

// 15-point Kronrod abscissae/weights with the embedded 7-point Gauss rule.
inline constexpr std::array<double, 8> kKronrodNodes = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr std::array<double, 8> kKronrodWeights = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
// Gauss weights for Kronrod nodes 1, 3, 5 and 7 (the centre).
inline constexpr std::array<double, 4> kGaussWeights = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

template <typename Scalar>
struct Interval {
  Scalar a, b;
  Array<Scalar> value;
  Array<Scalar> error;
};

template <typename Scalar, typename F>
Interval<Scalar> kronrod15(F& f, Scalar a, Scalar b, Eigen::Index dim) {
  const Scalar centre = Scalar(0.5) * (a + b);
  const Scalar half = Scalar(0.5) * (b - a);

  Array<Scalar> kronrod = Array<Scalar>::Zero(dim);
  Array<Scalar> gauss = Array<Scalar>::Zero(dim);
  Array<Scalar> nested = Array<Scalar>::Zero(dim);
  std::array<Array<Scalar>, 15> values;

  auto accumulate = [&](int slot, Scalar x, Scalar wk, Scalar wg) {
    Sample<Scalar> s = f(x);
    kronrod += wk * s.value;
    gauss += wg * s.value;
    if (s.error.size() == dim) nested += wk * s.error;
    values[slot] = std::move(s.value);
  };

  accumulate(0, centre, Scalar(kKronrodWeights[7]), Scalar(kGaussWeights[3]));
  for (int j = 0; j < 7; ++j) {
    const Scalar dx = half * Scalar(kKronrodNodes[j]);
    const Scalar wg = (j % 2 == 1) ? Scalar(kGaussWeights[j / 2]) : Scalar(0);
    accumulate(1 + 2 * j, centre - dx, Scalar(kKronrodWeights[j]), wg);
    accumulate(2 + 2 * j, centre + dx, Scalar(kKronrodWeights[j]), wg);
  }

  // QUADPACK error heuristic, applied per component.
  const Array<Scalar> mean = Scalar(0.5) * kronrod;
  Array<Scalar> asc = Scalar(kKronrodWeights[7]) * (values[0] - mean).abs();
  for (int j = 0; j < 7; ++j) {
    asc += Scalar(kKronrodWeights[j]) *
           ((values[1 + 2 * j] - mean).abs() + (values[2 + 2 * j] - mean).abs());
  }
  asc *= std::abs(half);

  Interval<Scalar> out{a, b, kronrod * half, Array<Scalar>(dim)};
  const Array<Scalar> diff = ((kronrod - gauss) * half).abs();
  for (Eigen::Index c = 0; c < dim; ++c) {
    Scalar err = diff[c];
    if (asc[c] != Scalar(0) && err != Scalar(0)) {
      err = asc[c] * std::min(Scalar(1), std::pow(Scalar(200) * err / asc[c], Scalar(1.5)));
    }
    out.error[c] = err + std::abs(half) * nested[c];
  }
  return out;
}

}  // namespace detail

/// Globally adaptive vector-valued Gauss–Kronrod (7/15) integration on [a, b].
///
/// `measure(total_value, error)` maps an error vector onto the scalar the
/// caller cares about (it must be monotone in each error component). The
/// interval whose error scores highest is bisected until
/// `measure(total, total_error) <= target`. Throws ConvergenceError carrying the
/// achieved measure once `max_intervals` is exhausted.
template <typename Scalar, typename F, typename Measure>
Result<Scalar> integrate(F&& f, Scalar a, Scalar b, Eigen::Index dim, Measure&& measure,
                         Scalar target, int max_intervals = 4000) {
  std::vector<detail::Interval<Scalar>> pieces;
  pieces.reserve(64);
  pieces.push_back(detail::kronrod15<Scalar>(f, a, b, dim));

  Result<Scalar> total{pieces.front().value, pieces.front().error, 1, 15};
  while (true) {
    const Scalar achieved = measure(total.value, total.error);
    if (!(achieved > target)) return total;
    if (static_cast<int>(pieces.size()) >= max_intervals) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "adaptive quadrature stalled at error %.3g (target %.3g)",
                    static_cast<double>(achieved), static_cast<double>(target));
      throw ConvergenceError(buf, static_cast<double>(achieved));
    }

    std::size_t worst = 0;
    Scalar worst_score = Scalar(-1);
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      const Scalar score = measure(total.value, pieces[i].error);
      if (score > worst_score) {
        worst_score = score;
        worst = i;
      }
    }

    const detail::Interval<Scalar> parent = pieces[worst];
    const Scalar mid = Scalar(0.5) * (parent.a + parent.b);
    if (!(mid > parent.a && mid < parent.b)) {
      throw ConvergenceError("adaptive quadrature exhausted floating-point resolution",
                             static_cast<double>(achieved));
    }
    pieces[worst] = detail::kronrod15<Scalar>(f, parent.a, mid, dim);
    pieces.push_back(detail::kronrod15<Scalar>(f, mid, parent.b, dim));
    total.evaluations += 30;
    total.intervals = static_cast<int>(pieces.size());

    // Re-summing avoids drift from repeated add/subtract of tiny updates.
    total.value.setZero();
    total.error.setZero();
    for (const auto& p : pieces) {
      total.value += p.value;
      total.error += p.error;
    }
  }
}

/// Relative-accuracy measure: max_c error_c / |value_c| (components that are
/// exactly zero contribute their absolute error).
template <typename Scalar>
Scalar max_relative_error(const Array<Scalar>& value, const Array<Scalar>& error) {
  Scalar worst = 0;
  for (Eigen::Index c = 0; c < value.size(); ++c) {
    const Scalar scale = std::abs(value[c]) > Scalar(0) ? std::abs(value[c]) : Scalar(1);
    worst = std::max(worst, error[c] / scale);
  }
  return worst;
}

}  // namespace tobitiv::quad

#endif  // TOBITIV_QUADRATURE_HPP
