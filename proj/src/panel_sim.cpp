#include "tobitiv/panel_sim.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "tobitiv/errors.hpp"

namespace tobitiv {

namespace {

constexpr int kMaxTruncationAttempts = 100;

struct VariantName {
  ModelVariant variant;
  std::string_view name;
};

constexpr VariantName kVariantNames[] = {
    {ModelVariant::CrossSection, "CrossSection"},
    {ModelVariant::IndependentErrors, "IndependentErrors"},
    {ModelVariant::NonStationary, "NonStationary"},
    {ModelVariant::FactorLoading, "FactorLoading"},
    {ModelVariant::VarianceFE, "VarianceFE"},
    {ModelVariant::AdditiveVariance, "AdditiveVariance"},
    {ModelVariant::SlopeFE, "SlopeFE"},
};

bool needs_variance_fe(ModelVariant v) {
  return v == ModelVariant::VarianceFE || v == ModelVariant::AdditiveVariance;
}

}  // namespace

std::string_view to_string(ModelVariant v) {
  for (const auto& n : kVariantNames) {
    if (n.variant == v) return n.name;
  }
  return "unknown";
}

std::string_view to_string(Sampling s) { return s == Sampling::Censored ? "censored" : "truncated"; }

ModelVariant parse_variant(std::string_view name) {
  for (const auto& n : kVariantNames) {
    if (n.name == name) return n.variant;
  }
  throw ConfigError("variant", "unknown model variant '" + std::string(name) + "'");
}

Sampling parse_sampling(std::string_view name) {
  if (name == "censored" || name == "Censored") return Sampling::Censored;
  if (name == "truncated" || name == "Truncated") return Sampling::Truncated;
  throw ConfigError("sampling", "expected 'censored' or 'truncated', got '" + std::string(name) + "'");
}

bool Distribution::strictly_positive() const {
  switch (family) {
    case Family::Normal: return false;
    case Family::LogNormal: return true;
    case Family::ShiftedAbsNormal: return a > 0.0 && b >= 0.0;
    case Family::Uniform: return a > 0.0;
    case Family::Constant: return a > 0.0;
  }
  return false;
}

void Distribution::validate(const std::string& field) const {
  if (!std::isfinite(a) || !std::isfinite(b)) throw ConfigError(field, "distribution parameters must be finite");
  switch (family) {
    case Family::Normal:
    case Family::LogNormal:
    case Family::ShiftedAbsNormal:
      if (b < 0.0) throw ConfigError(field, "scale parameter must be non-negative");
      break;
    case Family::Uniform:
      if (!(b > a)) throw ConfigError(field, "uniform bounds must satisfy lo < hi");
      break;
    case Family::Constant:
      break;
  }
}

double Distribution::sample(CounterRng& rng, std::normal_distribution<double>& normal) const {
  switch (family) {
    case Family::Normal: return a + b * normal(rng);
    case Family::LogNormal: return std::exp(a + b * normal(rng));
    case Family::ShiftedAbsNormal: return a + b * std::abs(normal(rng));
    case Family::Uniform: return std::uniform_real_distribution<double>(a, b)(rng);
    case Family::Constant: return a;
  }
  return a;
}

void PanelConfig::validate() const {
  if (n_individuals < 1) throw ConfigError("n_individuals", "must be positive");
  if (n_regressors < 1) throw ConfigError("n_regressors", "must be positive");
  const Index min_t = variant == ModelVariant::CrossSection ? 1 : needs_variance_fe(variant) ? 3 : 2;
  if (n_periods < min_t) {
    throw ConfigError("n_periods", "variant " + std::string(to_string(variant)) + " requires T >= " +
                                       std::to_string(min_t));
  }
  if (beta.size() != n_regressors) throw ConfigError("beta", "length must equal n_regressors");
  if (!beta.allFinite()) throw ConfigError("beta", "entries must be finite");
  if (static_cast<Index>(x_dist.size()) != n_regressors) {
    throw ConfigError("x_dist", "one distribution per regressor is required");
  }
  for (std::size_t k = 0; k < x_dist.size(); ++k) x_dist[k].validate("x_dist[" + std::to_string(k) + "]");
  if (!std::isfinite(fe.index_coef) || !std::isfinite(fe.noise_sd) || fe.noise_sd < 0.0) {
    throw ConfigError("fe_dist", "index_coef must be finite and noise_sd non-negative");
  }

  if (error_cov.rows() != n_periods || error_cov.cols() != n_periods) {
    throw ConfigError("error_cov", "must be T x T");
  }
  if (!error_cov.allFinite() || !error_cov.isApprox(error_cov.transpose(), 1e-12)) {
    throw ConfigError("error_cov", "must be finite and symmetric");
  }
  if (variant != ModelVariant::VarianceFE) {
    Eigen::LLT<Eigen::MatrixXd> llt(error_cov);
    if (llt.info() != Eigen::Success) throw ConfigError("error_cov", "must be positive definite");
  }
  if (variant == ModelVariant::AdditiveVariance) {
    const Eigen::MatrixXd off = error_cov - Eigen::MatrixXd(error_cov.diagonal().asDiagonal());
    if (off.cwiseAbs().maxCoeff() != 0.0) {
      throw ConfigError("error_cov", "AdditiveVariance requires independent errors over time (diagonal)");
    }
  }

  const bool is_fl = variant == ModelVariant::FactorLoading;
  if (factor_loadings.has_value() != is_fl) {
    throw ConfigError("factor_loadings", is_fl ? "required for FactorLoading" : "only allowed for FactorLoading");
  }
  if (is_fl) {
    const auto& rho = *factor_loadings;
    if (rho.size() != n_periods) throw ConfigError("factor_loadings", "length must equal n_periods");
    if (rho[0] != 1.0) throw ConfigError("factor_loadings", "first loading is the normalization and must be 1");
    if (!(rho.array() > 0.0).all() || !rho.allFinite()) {
      throw ConfigError("factor_loadings", "loadings must be finite and positive");
    }
  }

  const bool is_slope = variant == ModelVariant::SlopeFE;
  if (z_dist.has_value() != is_slope) {
    throw ConfigError("z_dist", is_slope ? "required for SlopeFE" : "only allowed for SlopeFE");
  }
  if (is_slope) {
    z_dist->validate("z_dist");
    if (!z_dist->strictly_positive()) throw ConfigError("z_dist", "support must be strictly positive");
  }

  if (variance_fe_dist.has_value() != needs_variance_fe(variant)) {
    throw ConfigError("variance_fe_dist", needs_variance_fe(variant)
                                              ? "required for VarianceFE and AdditiveVariance"
                                              : "only allowed for VarianceFE and AdditiveVariance");
  }
  if (variance_fe_dist) {
    variance_fe_dist->validate("variance_fe_dist");
    if (!variance_fe_dist->strictly_positive()) {
      throw ConfigError("variance_fe_dist", "support must be strictly positive");
    }
  }
}

PanelConfig PanelConfig::defaults(ModelVariant variant, Index n_individuals, Index n_periods,
                                  Eigen::VectorXd beta, std::uint64_t seed) {
  PanelConfig c;
  c.variant = variant;
  c.n_individuals = n_individuals;
  c.n_periods = n_periods;
  c.n_regressors = beta.size();
  c.beta = std::move(beta);
  c.error_cov = Eigen::MatrixXd::Identity(n_periods, n_periods);
  c.x_dist.assign(static_cast<std::size_t>(c.n_regressors), Distribution::normal(0.0, 1.0));
  c.seed = seed;
  if (variant == ModelVariant::CrossSection) c.fe = {0.0, 0.0};
  if (variant == ModelVariant::FactorLoading) {
    c.factor_loadings = Eigen::VectorXd::LinSpaced(n_periods, 1.0, 1.0 + 0.5 * double(n_periods - 1));
  }
  if (needs_variance_fe(variant)) c.variance_fe_dist = Distribution::shifted_abs_normal(0.5, 1.0);
  if (variant == ModelVariant::SlopeFE) c.z_dist = Distribution::lognormal(0.0, 0.5);
  return c;
}

bool PanelDataset::observed(Index i, Index t) const { return !std::isnan(y(i, t)); }

Index PanelDataset::retained_cells() const { return (y.array() == y.array()).count(); }

PanelDataset simulate(const PanelConfig& config) {
  config.validate();
  const Index n = config.n_individuals;
  const Index periods = config.n_periods;
  const Index k_reg = config.n_regressors;
  const ModelVariant v = config.variant;

  PanelDataset ds;
  ds.config = config;
  ds.y.resize(n, periods);
  ds.latent_y.resize(n, periods);
  ds.x.resize(n * periods, k_reg);
  ds.alpha.resize(n);
  if (v == ModelVariant::SlopeFE) ds.z = Eigen::MatrixXd(n, periods);
  if (needs_variance_fe(v)) ds.sigma2_individual.resize(n);

  Eigen::MatrixXd chol;
  if (v != ModelVariant::VarianceFE) chol = config.error_cov.llt().matrixL();

  Eigen::MatrixXd x_i(periods, k_reg);
  Eigen::VectorXd z_i(periods), eta(periods), eps(periods), latent(periods);
  const double nan = std::numeric_limits<double>::quiet_NaN();

  for (Index i = 0; i < n; ++i) {
    // Each individual owns a stream keyed by (seed, i), so the panel does not
    // depend on the order in which individuals are generated.
    CounterRng rng(substream(config.seed, static_cast<std::uint64_t>(i)));
    std::normal_distribution<double> normal;

    double alpha = 0.0;
    double s2_i = 0.0;
    for (int attempt = 0;; ++attempt) {
      if (attempt == kMaxTruncationAttempts) {
        throw ConfigError("sampling", "truncated sampling exceeded 100x oversampling for individual " +
                                          std::to_string(i));
      }
      for (Index t = 0; t < periods; ++t) {
        for (Index k = 0; k < k_reg; ++k) x_i(t, k) = config.x_dist[k].sample(rng, normal);
      }
      if (ds.z) {
        for (Index t = 0; t < periods; ++t) z_i[t] = config.z_dist->sample(rng, normal);
      }
      alpha = v == ModelVariant::CrossSection
                  ? 0.0
                  : config.fe.index_coef * (x_i * config.beta).mean() + config.fe.noise_sd * normal(rng);
      if (config.variance_fe_dist) s2_i = config.variance_fe_dist->sample(rng, normal);

      for (Index t = 0; t < periods; ++t) eta[t] = normal(rng);
      switch (v) {
        case ModelVariant::VarianceFE: eps = std::sqrt(s2_i) * eta; break;
        case ModelVariant::AdditiveVariance:
          eps = ((config.error_cov.diagonal().array() + s2_i).sqrt() * eta.array()).matrix();
          break;
        default: eps = chol * eta; break;
      }

      latent = x_i * config.beta + eps;
      for (Index t = 0; t < periods; ++t) {
        double loading = 1.0;
        if (v == ModelVariant::FactorLoading) loading = (*config.factor_loadings)[t];
        if (v == ModelVariant::SlopeFE) loading = z_i[t];
        latent[t] += loading * alpha;
      }

      if (config.sampling == Sampling::Censored || (latent.array() > 0.0).any()) break;
    }

    ds.alpha[i] = alpha;
    if (ds.sigma2_individual.size()) ds.sigma2_individual[i] = s2_i;
    for (Index t = 0; t < periods; ++t) {
      ds.latent_y(i, t) = latent[t];
      ds.x.row(i * periods + t) = x_i.row(t);
      if (ds.z) (*ds.z)(i, t) = z_i[t];
      if (latent[t] > 0.0) {
        ds.y(i, t) = latent[t];
      } else if (config.sampling == Sampling::Censored) {
        ds.y(i, t) = 0.0;
      } else {
        ds.y(i, t) = nan;
        ds.x.row(i * periods + t).setConstant(nan);
        if (ds.z) (*ds.z)(i, t) = nan;
      }
    }
  }
  return ds;
}

double censoring_rate(const PanelDataset& dataset) {
  if (dataset.config.sampling != Sampling::Censored) {
    throw Error(ErrorKind::UnsupportedMode, "censoring rate is undefined for truncated samples");
  }
  if (dataset.y.size() == 0) return 0.0;
  return static_cast<double>((dataset.y.array() == 0.0).count()) / static_cast<double>(dataset.y.size());
}

}  // namespace tobitiv
