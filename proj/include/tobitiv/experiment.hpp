#ifndef TOBITIV_EXPERIMENT_HPP
#define TOBITIV_EXPERIMENT_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tobitiv/gmm.hpp"
#include "tobitiv/moments.hpp"
#include "tobitiv/panel_sim.hpp"
#include "tobitiv/trunc_moments.hpp"

namespace tobitiv {

enum class EstimatorMethod {
  CrossSection,    ///< pooled cell-wise moments, ignores the fixed effect
  Pairwise,        ///< independent errors over time
  PairwiseKM,      ///< arbitrary error covariance, (k, m) list
  FactorLoading,   ///< nonlinear, one pair
  Triple,          ///< individual variance fixed effects
  TripleAdditive,  ///< additive variance, normalized to a reference period
  SlopeFE,
};

std::string_view to_string(EstimatorMethod m);
EstimatorMethod parse_estimator_method(std::string_view name);
EstimatorMethod default_method(ModelVariant v);

struct EstimatorConfig {
  std::optional<EstimatorMethod> method;  ///< defaults from the variant
  std::vector<std::pair<Index, Index>> pairs;  ///< empty: all t < s (factor loading: (1, 0))
  std::vector<std::array<Index, 3>> triples;   ///< empty: all t < s < tau
  std::vector<std::pair<int, int>> km{{1, 1}}; ///< cross-section uses the k's only
  InstrumentSet instruments = InstrumentSet::Default;
  Weighting weighting = Weighting::TwoSLS;
  Index reference_period = 0;
  NonlinearGMMOptions nonlinear;

  EstimatorMethod resolved_method(ModelVariant v) const { return method.value_or(default_method(v)); }
  /// Checks the choice against the panel shape; throws ConfigError.
  void validate(const PanelConfig& panel) const;
};

EstimatorConfig estimator_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EstimatorConfig& c, ModelVariant v);

/// Builds the configured system(s) and solves them.
EstimateResult estimate(const PanelDataset& ds, const EstimatorConfig& config);

struct ExperimentConfig {
  PanelConfig panel;
  EstimatorConfig estimator;
  int replications = 1;
  std::vector<Index> sample_sizes;
  std::uint64_t master_seed = 0;
  std::string output_dir = "out";

  void validate() const;
};

/// Accepts {"variant", "panel": {...}, "estimator": {...}, "replications",
/// "sample_sizes", "master_seed", "output_dir"}; a top-level "variant" must
/// agree with panel.variant when both are given.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

/// Seed of replication j at sample-size index i.
std::uint64_t replication_seed(std::uint64_t master_seed, std::uint64_t replication, std::uint64_t size_index);

struct ReplicationRecord {
  int replication = 0;
  Index n_individuals = 0;
  bool ok = false;
  std::string error_kind;
  std::string error_message;
  Eigen::VectorXd estimates;
  Eigen::VectorXd std_errors;
  std::optional<double> j_statistic;
  std::optional<double> j_p_value;
  bool converged = false;
  double wall_ms = 0.0;
};

struct ParameterSummary {
  Index n_individuals = 0;
  std::string parameter;
  double true_value = 0.0;
  int n_ok = 0;
  int n_failed = 0;
  double mean_estimate = 0.0;
  double mean_bias = 0.0;
  double mc_se_of_mean = 0.0;  ///< sd of estimates / sqrt(n_ok)
  double rmse = 0.0;
  double median_se = 0.0;
  double coverage_95 = 0.0;
  double j_reject_5pct = 0.0;  ///< NaN when no replication reports J
};

struct MonteCarloResult {
  std::vector<std::string> param_names;
  std::vector<ReplicationRecord> records;  ///< size-major, then replication
  std::vector<ParameterSummary> summary;
  /// Set when more than 20% of the replications at some sample size failed.
  std::optional<std::string> abort_reason;
};

/// Runs every (sample size, replication) on `workers` threads. Output does
/// not depend on the worker count.
MonteCarloResult run_monte_carlo(const ExperimentConfig& config, int workers);

std::vector<ParameterSummary> summarize(const std::vector<std::string>& param_names,
                                        const std::vector<ReplicationRecord>& records, const PanelConfig& panel);

std::string replications_csv(const MonteCarloResult& r);
std::string summary_csv(const std::vector<ParameterSummary>& s);
std::string timings_csv(const MonteCarloResult& r);
nlohmann::json to_json(const MonteCarloResult& r);

struct VerifyConfig {
  int points = 50;
  std::uint64_t seed = 1;
  double mu_max = 2.0;
  double sigma2_lo = 0.25;
  double sigma2_hi = 4.0;
  double rho_max = 0.9;
  std::vector<std::pair<int, int>> km;  ///< default {1,2,3}^2
  double tol = 1e-6;
  double quad_tol = 1e-7;
  std::vector<BivariateNormalSpec> explicit_points;  ///< used instead of the random grid when non-empty

  void validate() const;
  std::vector<BivariateNormalSpec> grid() const;
};

VerifyConfig verify_config_from_json(const nlohmann::json& j);

struct VerifyRow {
  Index point = 0;
  BivariateNormalSpec spec;
  int k = 0;
  int m = 0;
  double residual = 0.0;
  bool pass = false;
};

struct VerifyReport {
  std::vector<VerifyRow> rows;
  bool all_pass = true;
  double max_abs_residual = 0.0;
};

VerifyReport run_verify(const VerifyConfig& config, int workers);
std::string verify_points_csv(const VerifyReport& r);
std::string verify_summary_csv(const VerifyReport& r);
nlohmann::json to_json(const VerifyReport& r);

}  // namespace tobitiv

#endif  // TOBITIV_EXPERIMENT_HPP
