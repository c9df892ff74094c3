#ifndef TOBITIV_PANEL_SIM_HPP
#define TOBITIV_PANEL_SIM_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "tobitiv/rng.hpp"

namespace tobitiv {

using Eigen::Index;

enum class ModelVariant {
  CrossSection,       ///< y = max{0, x'b + e}
  IndependentErrors,  ///< y*_it = x_it'b + a_i + e_it, e independent over t
  NonStationary,      ///< same index, e_i ~ N(0, Sigma) with arbitrary Sigma
  FactorLoading,      ///< y*_it = x_it'b + rho_t a_i + e_it
  VarianceFE,         ///< e_it ~ N(0, s_i^2) i.i.d. over t
  AdditiveVariance,   ///< var(e_it) = s_i^2 + s_t^2
  SlopeFE,            ///< y*_it = x_it'b + z_it a_i + e_it, z_it > 0
};

enum class Sampling { Censored, Truncated };

std::string_view to_string(ModelVariant v);
std::string_view to_string(Sampling s);
ModelVariant parse_variant(std::string_view name);
Sampling parse_sampling(std::string_view name);

/// Scalar distribution used for regressors, z and individual variances.
struct Distribution {
  enum class Family {
    Normal,            ///< N(a, b^2)
    LogNormal,         ///< exp(N(a, b^2))
    ShiftedAbsNormal,  ///< a + b |N(0, 1)|
    Uniform,           ///< U(a, b)
    Constant,          ///< a
  };
  Family family = Family::Normal;
  double a = 0.0;
  double b = 1.0;

  static Distribution normal(double mean, double sd) { return {Family::Normal, mean, sd}; }
  static Distribution lognormal(double meanlog, double sdlog) { return {Family::LogNormal, meanlog, sdlog}; }
  static Distribution shifted_abs_normal(double shift, double scale) {
    return {Family::ShiftedAbsNormal, shift, scale};
  }
  static Distribution uniform(double lo, double hi) { return {Family::Uniform, lo, hi}; }
  static Distribution constant(double v) { return {Family::Constant, v, 0.0}; }

  bool strictly_positive() const;
  void validate(const std::string& field) const;

  double sample(CounterRng& rng, std::normal_distribution<double>& normal) const;
};

/// a_i = index_coef * mean_t(x_it'b) + noise_sd * N(0, 1).
struct FixedEffectSpec {
  double index_coef = 1.0;
  double noise_sd = 1.0;
};

struct PanelConfig {
  ModelVariant variant = ModelVariant::IndependentErrors;
  Index n_individuals = 1000;
  Index n_periods = 2;
  Index n_regressors = 1;
  Eigen::VectorXd beta;
  /// T x T. Ignored for VarianceFE; for AdditiveVariance only the diagonal
  /// (the time components s_t^2) is used and off-diagonals must be zero.
  Eigen::MatrixXd error_cov;
  std::optional<Eigen::VectorXd> factor_loadings;
  std::optional<Distribution> variance_fe_dist;
  FixedEffectSpec fe;
  std::vector<Distribution> x_dist;
  std::optional<Distribution> z_dist;
  Sampling sampling = Sampling::Censored;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the offending field.
  void validate() const;

  /// A config for `variant` with the documented defaults filled in:
  /// x ~ N(0, 1), a_i = mean_t(x_it'b) + N(0, 1), z ~ exp(N(0, 0.25)),
  /// s_i^2 ~ 0.5 + |N(0, 1)|, unit error variances and rho = (1, 1.5, ...).
  static PanelConfig defaults(ModelVariant variant, Index n_individuals, Index n_periods,
                              Eigen::VectorXd beta, std::uint64_t seed);
};

/// Observed panel plus the latent draws that produced it.
///
/// Under truncated sampling, absent cells hold NaN in `y` (and in `x`, `z`).
/// `latent_y`, `alpha` and `sigma2_individual` are test-only: they are
/// never serialized into the estimation input and builders never read them.
struct PanelDataset {
  Eigen::MatrixXd y;                 ///< N x T
  Eigen::MatrixXd x;                 ///< (N*T) x K, row i*T + t
  std::optional<Eigen::MatrixXd> z;  ///< N x T
  Eigen::MatrixXd latent_y;          ///< N x T
  Eigen::VectorXd alpha;             ///< N
  Eigen::VectorXd sigma2_individual; ///< N, VarianceFE / AdditiveVariance only
  PanelConfig config;

  Index n_individuals() const { return y.rows(); }
  Index n_periods() const { return y.cols(); }
  Index n_regressors() const { return x.cols(); }

  auto x_at(Index i, Index t) const { return x.row(i * n_periods() + t).transpose(); }
  bool observed(Index i, Index t) const;
  bool has_truth() const { return latent_y.size() == y.size(); }
  Index retained_cells() const;
};

PanelDataset simulate(const PanelConfig& config);

/// Fraction of cells with y = 0. Censored datasets only.
double censoring_rate(const PanelDataset& dataset);

/// Writes meta.json, y.csv, x.csv, optional z.csv; latent truth goes to
/// truth/ when `with_truth` is set.
void save_dataset(const PanelDataset& dataset, const std::string& dir, bool with_truth = true);

/// Reads the estimation input (never the truth/ files).
PanelDataset load_dataset(const std::string& dir);

}  // namespace tobitiv

#endif  // TOBITIV_PANEL_SIM_HPP
