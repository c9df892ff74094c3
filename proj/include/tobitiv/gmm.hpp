#ifndef TOBITIV_GMM_HPP
#define TOBITIV_GMM_HPP

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tobitiv/moments.hpp"

namespace tobitiv {

enum class Weighting {
  TwoSLS,   ///< report the 2SLS estimate
  TwoStep,  ///< report the efficient two-step GMM estimate
};

Weighting parse_weighting(std::string_view name);
std::string_view to_string(Weighting w);

/// Shared by the linear and nonlinear solvers.
struct EstimateResult {
  std::string estimator;
  std::vector<std::string> param_names;
  Eigen::VectorXd estimates;
  Eigen::MatrixXd covariance;  ///< cluster-robust
  std::optional<double> j_statistic;
  Index j_dof = 0;
  Index n_rows = 0;
  Index n_clusters = 0;
  Index n_instruments = 0;       ///< columns supplied
  Index instrument_rank = 0;     ///< after removing linear dependence
  double condition_number = 0.0;

  // Nonlinear solver diagnostics; trivially set for linear fits.
  bool converged = true;
  int iterations = 0;
  double objective_value = 0.0;
  double gradient_norm = 0.0;

  Eigen::VectorXd std_errors() const { return covariance.diagonal().cwiseMax(0.0).cwiseSqrt(); }
  Index param_index(const std::string& name) const;
};

struct LinearIVOptions {
  Weighting weighting = Weighting::TwoSLS;
  double rank_tol = 1e-10;
};

/// 2SLS through an orthonormal basis of the instrument space:
/// with Q the thin Q factor of the instruments, solves min |Q'y - Q'X b|.
/// Covariance is the clustered sandwich with a G/(G-1) correction; the J
/// statistic is evaluated at the two-step efficient estimate.
EstimateResult two_stage_least_squares(const MomentSystem& system, const LinearIVOptions& options = {});

struct NonlinearGMMOptions {
  double r_lo = 0.05;
  double r_hi = 20.0;
  int grid_points = 41;   ///< log-spaced scan used to bracket the minimum
  double x_tol = 1e-10;   ///< on log r
  int max_iterations = 200;
  double rank_tol = 1e-10;
  double gradient_tol = 1e-4;
  /// Optional starting point; only its r component is used, as an extra
  /// candidate in the bracketing scan.
  std::optional<Eigen::VectorXd> theta0;
};

/// Two-step GMM for the factor-loading system. The moments are linear in
/// (beta, a, b) at fixed r, so those are concentrated out and the search is
/// one-dimensional in log r.
EstimateResult nonlinear_gmm(const NonlinearMomentSystem& system, const NonlinearGMMOptions& options = {});

/// Inner solution at fixed r under the first-step (2SLS) weight: the
/// (beta, a, b) block, in that order.
Eigen::VectorXd concentrated_estimates(const NonlinearMomentSystem& system, double r, double rank_tol = 1e-10);

struct JTest {
  double statistic = 0.0;
  Index dof = 0;
  double p_value = 1.0;
};

/// Throws NotApplicable for just-identified fits.
JTest j_test(const EstimateResult& result);

nlohmann::json to_json(const EstimateResult& result);

}  // namespace tobitiv

#endif  // TOBITIV_GMM_HPP
