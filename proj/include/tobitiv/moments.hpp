#ifndef TOBITIV_MOMENTS_HPP
#define TOBITIV_MOMENTS_HPP

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tobitiv/panel_sim.hpp"

namespace tobitiv {

/// Which functions of the exogenous variables serve as instruments.
///
/// With time-exchangeable data, the pairwise regressors have K + 1
/// directions that flip sign under t <-> s (beta and the variance sum) but
/// Difference offers only K such instruments (x_t - x_s), so the system is
/// rank deficient in population. Default uses every monomial of degree <= 2
/// in the exogenous variables of the periods involved, whose antisymmetric
/// part (x_t,a x_t,b - x_s,a x_s,b, x_t,a x_s,b - x_s,a x_t,b) supplies the
/// missing directions. Triples add the alternating Vandermonde product per
/// regressor.
enum class InstrumentSet {
  Default,     ///< quadratic polynomial in (x_t, x_s [, x_tau] [, z_t, z_s])
  Difference,  ///< levels, differences and squared differences (see default_instruments)
  Linear,      ///< constant and levels only
};

InstrumentSet parse_instrument_set(std::string_view name);
std::string_view to_string(InstrumentSet s);

/// One estimating equation: dependent = regressors' theta + xi, E[instruments xi] = 0.
struct PairRow {
  double dependent = 0.0;
  Eigen::VectorXd regressors;
  Eigen::VectorXd instruments;
  Index individual = 0;
  std::vector<Index> periods;
};

/// Stacked linear estimating equations, stored column-wise.
///
/// Rows only ever come from individual-period cells with strictly positive
/// observed y; on that event y equals the latent y*, which is what lets the
/// latent-variable moment conditions be evaluated on observed data.
struct MomentSystem {
  std::vector<std::string> param_names;
  Eigen::VectorXd dependent;
  Eigen::MatrixXd regressors;   ///< rows x params
  Eigen::MatrixXd instruments;  ///< rows x instruments
  std::vector<Index> cluster;   ///< individual of each row
  std::vector<std::vector<Index>> periods;

  Index rows() const { return dependent.size(); }
  Index n_params() const { return regressors.cols(); }
  Index n_instruments() const { return instruments.cols(); }
  PairRow row(Index r) const;
  Index param_index(const std::string& name) const;  ///< -1 when absent
  void validate() const;
};

/// Residual-function form of the factor-loading moment condition for one
/// period pair (t, s), with parameters (beta, r, a, b):
///
///   y_t^2 y_s - r y_s^2 y_t - y_t y_s (x_t - r x_s)'beta + a y_t - b y_s
///
/// where r = rho_t / rho_s, a = s_s^2 r - s_ts and b = s_t^2 - s_ts r.
struct NonlinearMomentSystem {
  Index t = 0;
  Index s = 1;
  Eigen::VectorXd y_t, y_s;
  Eigen::MatrixXd x_t, x_s;  ///< rows x K
  Eigen::MatrixXd instruments;
  std::vector<Index> cluster;
  std::vector<std::string> param_names;  ///< beta..., r, a, b

  Index rows() const { return y_t.size(); }
  Index n_beta() const { return x_t.cols(); }
  Index n_params() const { return n_beta() + 3; }
  Index r_index() const { return n_beta(); }

  Eigen::VectorXd residuals(const Eigen::VectorXd& theta) const;
  /// Average over rows of instruments x residual.
  Eigen::VectorXd mean_moments(const Eigen::VectorXd& theta) const;
  /// The system is linear in (beta, a, b) once r is fixed; this is that system.
  MomentSystem linear_system(double r) const;
};

/// (1, x_t', x_s', (x_t - x_s)', ((x_t - x_s)^2)' [, z_t, z_s, z_t z_s, z_t^2, z_s^2]),
/// the Difference set for a pair.
Eigen::VectorXd default_instruments(const Eigen::Ref<const Eigen::VectorXd>& x_t,
                                    const Eigen::Ref<const Eigen::VectorXd>& x_s,
                                    std::optional<double> z_t = std::nullopt,
                                    std::optional<double> z_s = std::nullopt);

/// y^{k+1} = y^k x'beta + k y^{k-1} sigma^2 + xi on every positive cell.
MomentSystem build_cross_section(const PanelDataset& ds, int k, InstrumentSet set = InstrumentSet::Default);

/// Pairwise condition under errors independent over time; parameters
/// (beta, sigma2[t], sigma2[s]).
MomentSystem build_pairwise_independent(const PanelDataset& ds, Index t, Index s,
                                        InstrumentSet set = InstrumentSet::Default);

/// Pairwise (k, m) condition under arbitrary jointly normal errors; parameters
/// (beta, sigma2[t]-cov[t,s], sigma2[s]-cov[t,s]).
MomentSystem build_pairwise_nonstationary(const PanelDataset& ds, Index t, Index s, int k, int m,
                                          InstrumentSet set = InstrumentSet::Default);

NonlinearMomentSystem build_factor_loading(const PanelDataset& ds, Index t, Index s,
                                           InstrumentSet set = InstrumentSet::Default);

/// Cyclic triple (t, s, tau) in which individual variances cancel; parameters (beta).
MomentSystem build_triple_variance_fe(const PanelDataset& ds, Index t, Index s, Index tau,
                                      InstrumentSet set = InstrumentSet::Default);

/// Triple with additive variance s_i^2 + s_t^2; parameters
/// (beta, sigma2[s], sigma2[t], sigma2[tau]). The three variance regressors
/// sum to zero, so only differences of the time components are identified;
/// see normalize_additive_variance.
MomentSystem build_triple_additive_variance(const PanelDataset& ds, Index t, Index s, Index tau,
                                            InstrumentSet set = InstrumentSet::Default);

/// Fixed effect multiplying an observed z > 0; parameters
/// (beta, sigma2[t], sigma2[s], cov[t,s]).
MomentSystem build_pairwise_slope_fe(const PanelDataset& ds, Index t, Index s,
                                     InstrumentSet set = InstrumentSet::Default);

/// Drops sigma2[reference] and relabels each remaining sigma2[j] as
/// sigma2[j]-sigma2[reference], the identified contrast.
MomentSystem normalize_additive_variance(const MomentSystem& system, Index reference_period);

/// Stacks systems into one: parameters with equal labels are shared, each
/// input keeps its own instrument block, rows are ordered by individual.
MomentSystem stack(std::span<const MomentSystem> systems);

/// Value of a parameter label under the simulator's configuration, e.g.
/// "beta[0]", "sigma2[1]-cov[0,1]", "r[1/0]" or "sigma2[2]-sigma2[0]".
/// Throws Domain for labels the configuration does not determine.
double true_parameter(const PanelConfig& config, const std::string& label);
Eigen::VectorXd true_parameters(const PanelConfig& config, const std::vector<std::string>& labels);

/// Instrument vector of a pair under `set`; z terms are appended when given.
Eigen::VectorXd pair_instruments(InstrumentSet set, const Eigen::Ref<const Eigen::VectorXd>& x_t,
                                 const Eigen::Ref<const Eigen::VectorXd>& x_s, std::optional<double> z_t = std::nullopt,
                                 std::optional<double> z_s = std::nullopt);

/// individual, periods, dependent, one column per regressor, one per instrument.
void write_moment_system_csv(const MomentSystem& system, const std::string& path);

}  // namespace tobitiv

#endif  // TOBITIV_MOMENTS_HPP
