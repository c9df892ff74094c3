#include "tobitiv/gmm.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "tobitiv/errors.hpp"

namespace tobitiv {

using Eigen::MatrixXd;
using Eigen::VectorXd;

Weighting parse_weighting(std::string_view name) {
  if (name == "2sls") return Weighting::TwoSLS;
  if (name == "two_step") return Weighting::TwoStep;
  throw ConfigError("estimator.weighting", "expected '2sls' or 'two_step', got '" + std::string(name) + "'");
}

std::string_view to_string(Weighting w) { return w == Weighting::TwoSLS ? "2sls" : "two_step"; }

Index EstimateResult::param_index(const std::string& name) const {
  const auto it = std::find(param_names.begin(), param_names.end(), name);
  return it == param_names.end() ? -1 : static_cast<Index>(it - param_names.begin());
}

namespace {

// Orthonormal basis of the column space of the instruments. Columns are
// scaled to unit norm first so the rank threshold is relative per column.
struct InstrumentBasis {
  MatrixXd q;
  Index rank = 0;
};

InstrumentBasis instrument_basis(const MatrixXd& z, double tol) {
  VectorXd scale = z.colwise().norm();
  for (Index j = 0; j < scale.size(); ++j) {
    if (scale[j] == 0.0) scale[j] = 1.0;
  }
  const MatrixXd zs = z * scale.cwiseInverse().asDiagonal();
  Eigen::ColPivHouseholderQR<MatrixXd> qr(zs.rows(), zs.cols());
  qr.setThreshold(tol);
  qr.compute(zs);
  InstrumentBasis out;
  out.rank = qr.rank();
  out.q = qr.householderQ() * MatrixXd::Identity(z.rows(), out.rank);
  return out;
}

struct Clusters {
  std::vector<Index> id;  ///< dense cluster index of each row
  Index count = 0;
};

Clusters cluster_index(const std::vector<Index>& raw) {
  std::vector<Index> unique = raw;
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  Clusters out;
  out.count = static_cast<Index>(unique.size());
  out.id.reserve(raw.size());
  for (Index c : raw) out.id.push_back(std::lower_bound(unique.begin(), unique.end(), c) - unique.begin());
  return out;
}

// G x rank matrix of per-cluster sums of q_i e_i.
MatrixXd cluster_sums(const MatrixXd& q, const VectorXd& e, const Clusters& clusters) {
  MatrixXd h = MatrixXd::Zero(clusters.count, q.cols());
  for (Index i = 0; i < q.rows(); ++i) h.row(clusters.id[static_cast<std::size_t>(i)]) += e[i] * q.row(i);
  return h;
}

// Upper-triangular R with R'R = H'H, or nothing when H'H is singular.
std::optional<MatrixXd> weight_root(const MatrixXd& h) {
  if (h.rows() < h.cols()) return std::nullopt;
  Eigen::HouseholderQR<MatrixXd> qr(h);
  MatrixXd r = qr.matrixQR().topRows(h.cols()).triangularView<Eigen::Upper>();
  const VectorXd d = r.diagonal().cwiseAbs();
  if (d.minCoeff() <= 1e-12 * d.maxCoeff()) return std::nullopt;
  return r;
}

// R^{-T} M
MatrixXd whiten(const MatrixXd& r, const MatrixXd& m) {
  return r.transpose().triangularView<Eigen::Lower>().solve(m);
}

struct LsSolution {
  VectorXd theta;
  MatrixXd pinv;  ///< p x rows, so that theta = pinv b
  double condition = 0.0;
};

// min |b - A theta| by SVD of the column-scaled A; throws Identification
// naming the parameters spanned by the numerical null space.
LsSolution least_squares(const MatrixXd& a, const VectorXd& b, const std::vector<std::string>& names,
                         double tol) {
  const Index p = a.cols();
  if (a.rows() < p) {
    throw Error(ErrorKind::Identification, "only " + std::to_string(a.rows()) +
                                               " independent instruments for " + std::to_string(p) + " parameters");
  }
  VectorXd scale = a.colwise().norm();
  for (Index j = 0; j < p; ++j) {
    if (!(scale[j] > 0.0)) scale[j] = 1.0;
  }
  const MatrixXd as = a * scale.cwiseInverse().asDiagonal();
  Eigen::JacobiSVD<MatrixXd> svd(as, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VectorXd sv = svd.singularValues();
  if (!(sv[p - 1] > tol * sv[0])) {
    std::ostringstream msg;
    msg << "parameters not identified; null space involves:";
    for (Index c = 0; c < p; ++c) {
      if (sv[c] > tol * sv[0]) continue;
      for (Index j = 0; j < p; ++j) {
        if (std::abs(svd.matrixV()(j, c)) > 0.1) msg << ' ' << names[static_cast<std::size_t>(j)];
      }
    }
    throw Error(ErrorKind::Identification, msg.str());
  }
  LsSolution out;
  out.pinv = scale.cwiseInverse().asDiagonal() * svd.matrixV() * sv.cwiseInverse().asDiagonal() *
             svd.matrixU().transpose();
  out.theta = out.pinv * b;
  out.condition = sv[0] / sv[p - 1];
  return out;
}

void check_rows(Index rows, Index params) {
  if (rows < params) {
    throw Error(ErrorKind::InsufficientObservations, std::to_string(rows) + " rows for " + std::to_string(params) +
                                                         " parameters");
  }
}

}  // namespace

EstimateResult two_stage_least_squares(const MomentSystem& system, const LinearIVOptions& options) {
  system.validate();
  const Index n = system.rows(), p = system.n_params();
  check_rows(n, p);

  const InstrumentBasis basis = instrument_basis(system.instruments, options.rank_tol);
  const MatrixXd a = basis.q.transpose() * system.regressors;
  const VectorXd b = basis.q.transpose() * system.dependent;
  const LsSolution fit = least_squares(a, b, system.param_names, options.rank_tol);

  const Clusters clusters = cluster_index(system.cluster);
  const double g = static_cast<double>(clusters.count);
  const VectorXd resid = system.dependent - system.regressors * fit.theta;
  const MatrixXd h = cluster_sums(basis.q, resid, clusters);

  EstimateResult out;
  out.estimator = "2sls";
  out.param_names = system.param_names;
  out.estimates = fit.theta;
  out.covariance = fit.pinv * (h.transpose() * h) * fit.pinv.transpose();
  if (clusters.count > 1) out.covariance *= g / (g - 1.0);
  out.n_rows = n;
  out.n_clusters = clusters.count;
  out.n_instruments = system.n_instruments();
  out.instrument_rank = basis.rank;
  out.condition_number = fit.condition;
  out.j_dof = basis.rank - p;

  if (basis.rank > p) {
    if (const auto root = weight_root(h)) {
      const LsSolution eff = least_squares(whiten(*root, a), whiten(*root, b), system.param_names, options.rank_tol);
      const VectorXd gap = whiten(*root, b - a * eff.theta);
      out.j_statistic = gap.squaredNorm();
      if (options.weighting == Weighting::TwoStep) {
        out.estimator = "two_step";
        out.estimates = eff.theta;
        out.covariance = eff.pinv * eff.pinv.transpose();
      }
    }
  }
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  return out;
}

namespace {

// The factor-loading moments projected onto the instrument basis:
// m(r, phi) = (b0 - r b1) - (A0 - r A1) phi with phi = (beta, a, b).
struct ProjectedSystem {
  MatrixXd a0, a1;
  VectorXd b0, b1;

  MatrixXd a(double r) const { return a0 - r * a1; }
  VectorXd b(double r) const { return b0 - r * b1; }
};

// Regressor blocks at r = 0 and their r-slopes.
struct RawBlocks {
  MatrixXd x0, x1;
  VectorXd d0, d1;
};

RawBlocks raw_blocks(const NonlinearMomentSystem& system) {
  const Index n = system.rows(), k = system.n_beta();
  const VectorXd yy = system.y_t.cwiseProduct(system.y_s);
  RawBlocks out{MatrixXd(n, k + 2), MatrixXd::Zero(n, k + 2), VectorXd(), VectorXd()};
  out.x0.leftCols(k) = system.x_t.array().colwise() * yy.array();
  out.x0.col(k) = -system.y_t;
  out.x0.col(k + 1) = system.y_s;
  out.x1.leftCols(k) = system.x_s.array().colwise() * yy.array();
  out.d0 = system.y_t.array().square() * system.y_s.array();
  out.d1 = system.y_s.array().square() * system.y_t.array();
  return out;
}

ProjectedSystem project(const MatrixXd& q, const RawBlocks& raw) {
  return {q.transpose() * raw.x0, q.transpose() * raw.x1, q.transpose() * raw.d0, q.transpose() * raw.d1};
}

std::vector<std::string> concentrated_names(const NonlinearMomentSystem& system) {
  const auto k = static_cast<std::size_t>(system.n_beta());
  std::vector<std::string> names(system.param_names.begin(), system.param_names.begin() + k);
  names.push_back(system.param_names[k + 1]);
  names.push_back(system.param_names[k + 2]);
  return names;
}

struct Profile {
  double log_r = 0.0;
  double value = 0.0;
  VectorXd phi;
};

class ProfileSearch {
 public:
  ProfileSearch(const ProjectedSystem& ps, const std::vector<std::string>& names, const NonlinearGMMOptions& opt)
      : ps_(ps), names_(names), opt_(opt) {}

  Profile at(double log_r) {
    ++evaluations_;
    const double r = std::exp(log_r);
    const MatrixXd a = ps_.a(r);
    const VectorXd b = ps_.b(r);
    Profile p;
    p.log_r = log_r;
    p.phi = least_squares(a, b, names_, opt_.rank_tol).theta;
    p.value = (b - a * p.phi).squaredNorm();
    return p;
  }

  Profile minimize(int& iterations, bool& converged) {
    const double lo = std::log(opt_.r_lo), hi = std::log(opt_.r_hi);
    std::vector<double> grid;
    for (int i = 0; i < opt_.grid_points; ++i) grid.push_back(lo + (hi - lo) * i / (opt_.grid_points - 1));
    if (opt_.theta0) {
      const double r0 = (*opt_.theta0)[static_cast<Index>(names_.size()) - 2];
      if (r0 > opt_.r_lo && r0 < opt_.r_hi) grid.push_back(std::log(r0));
      std::sort(grid.begin(), grid.end());
    }
    std::vector<Profile> scan;
    for (double x : grid) scan.push_back(at(x));
    const auto best = static_cast<std::size_t>(
        std::min_element(scan.begin(), scan.end(), [](const Profile& u, const Profile& v) { return u.value < v.value; }) -
        scan.begin());
    if (best == 0 || best + 1 == scan.size()) {
      std::ostringstream msg;
      msg << "objective is minimized at the bracket boundary r = " << std::exp(scan[best].log_r) << " of ["
          << opt_.r_lo << ", " << opt_.r_hi << "]";
      throw Error(ErrorKind::Bracket, msg.str());
    }

    // Golden section on the grid cell pair around the best point.
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = scan[best - 1].log_r, b = scan[best + 1].log_r;
    Profile c = at(b - inv_phi * (b - a)), d = at(a + inv_phi * (b - a));
    iterations = 0;
    while (b - a > opt_.x_tol && iterations < opt_.max_iterations) {
      ++iterations;
      if (c.value < d.value) {
        b = d.log_r;
        d = c;
        c = at(b - inv_phi * (b - a));
      } else {
        a = c.log_r;
        c = d;
        d = at(a + inv_phi * (b - a));
      }
    }
    converged = b - a <= opt_.x_tol;
    Profile x = c.value < d.value ? c : d;

    // One parabolic step through (c, d) and their midpoint.
    const Profile m = at(0.5 * (c.log_r + d.log_r));
    const double h = 0.5 * (d.log_r - c.log_r);
    const double curvature = c.value - 2.0 * m.value + d.value;
    if (h > 0.0 && curvature > 0.0) {
      const double step = h * (c.value - d.value) / (2.0 * curvature);
      if (std::abs(step) <= h) {
        const Profile q = at(m.log_r + step);
        if (q.value < x.value) x = q;
      }
    }
    if (m.value < x.value) x = m;
    return x;
  }

  int evaluations() const { return evaluations_; }

 private:
  const ProjectedSystem& ps_;
  const std::vector<std::string>& names_;
  const NonlinearGMMOptions& opt_;
  int evaluations_ = 0;
};

}  // namespace

EstimateResult nonlinear_gmm(const NonlinearMomentSystem& system, const NonlinearGMMOptions& options) {
  if (!(options.r_lo > 0.0) || !(options.r_hi > options.r_lo)) {
    throw ConfigError("estimator.r_bracket", "requires 0 < lo < hi");
  }
  if (options.grid_points < 3) throw ConfigError("estimator.grid_points", "must be at least 3");
  if (options.theta0 && (options.theta0->size() != system.n_params() || !options.theta0->allFinite())) {
    throw ConfigError("estimator.theta0", "must be a finite vector of length " + std::to_string(system.n_params()));
  }

  const Index n = system.rows(), k = system.n_beta(), p = system.n_params();
  check_rows(n, p);
  if (!system.y_t.allFinite() || !system.y_s.allFinite() || !system.x_t.allFinite() || !system.x_s.allFinite() ||
      !system.instruments.allFinite()) {
    throw Error(ErrorKind::Domain, "factor-loading system contains non-finite entries");
  }

  const InstrumentBasis basis = instrument_basis(system.instruments, options.rank_tol);
  if (basis.rank < p) {
    throw Error(ErrorKind::Identification, "only " + std::to_string(basis.rank) + " independent instruments for " +
                                               std::to_string(p) + " parameters");
  }

  const MatrixXd& q = basis.q;
  const RawBlocks blocks = raw_blocks(system);
  const auto& [x0, x1, d0, d1] = blocks;
  const ProjectedSystem raw = project(q, blocks);
  const std::vector<std::string> linear_names = concentrated_names(system);

  int iterations1 = 0, iterations2 = 0;
  bool converged1 = false, converged2 = false;
  ProfileSearch first(raw, linear_names, options);
  const Profile step1 = first.minimize(iterations1, converged1);

  const double r1 = std::exp(step1.log_r);
  const VectorXd resid1 = (d0 - r1 * d1) - (x0 - r1 * x1) * step1.phi;
  const Clusters clusters = cluster_index(system.cluster);
  const auto root = weight_root(cluster_sums(q, resid1, clusters));
  if (!root) {
    throw Error(ErrorKind::Identification, "clustered moment covariance is singular (" +
                                               std::to_string(clusters.count) + " clusters, " +
                                               std::to_string(basis.rank) + " instruments)");
  }
  ProjectedSystem white{whiten(*root, raw.a0), whiten(*root, raw.a1), whiten(*root, raw.b0), whiten(*root, raw.b1)};
  ProfileSearch second(white, linear_names, options);
  const Profile step2 = second.minimize(iterations2, converged2);

  VectorXd theta(p);
  theta.head(k) = step2.phi.head(k);
  theta[k] = std::exp(step2.log_r);
  theta.tail(2) = step2.phi.tail(2);

  const auto moments = [&](const VectorXd& th) -> VectorXd {
    VectorXd phi(k + 2);
    phi << th.head(k), th.tail(2);
    return white.b(th[k]) - white.a(th[k]) * phi;
  };
  const VectorXd m_hat = moments(theta);
  MatrixXd jac(basis.rank, p);
  for (Index j = 0; j < p; ++j) {
    const double h = 1e-6 * std::max(std::abs(theta[j]), 1.0);
    VectorXd up = theta, down = theta;
    up[j] += h;
    down[j] -= h;
    jac.col(j) = (moments(up) - moments(down)) / (2.0 * h);
  }
  const LsSolution cov_fit = least_squares(jac, m_hat, system.param_names, options.rank_tol);

  EstimateResult out;
  out.estimator = "nonlinear_gmm";
  out.param_names = system.param_names;
  out.estimates = theta;
  out.covariance = cov_fit.pinv * cov_fit.pinv.transpose();
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  out.n_rows = n;
  out.n_clusters = clusters.count;
  out.n_instruments = system.instruments.cols();
  out.instrument_rank = basis.rank;
  out.condition_number = cov_fit.condition;
  out.j_dof = basis.rank - p;
  if (out.j_dof > 0) out.j_statistic = step2.value;
  out.iterations = iterations1 + iterations2;
  out.objective_value = step2.value / static_cast<double>(clusters.count);

  const VectorXd grad = 2.0 * jac.transpose() * m_hat;
  double gnorm = 0.0;
  for (Index j = 0; j < p; ++j) gnorm = std::max(gnorm, std::abs(grad[j]) * std::max(std::abs(theta[j]), 1.0));
  out.gradient_norm = gnorm;
  out.converged = converged1 && converged2 && gnorm <= options.gradient_tol * std::max(1.0, step2.value);
  return out;
}

VectorXd concentrated_estimates(const NonlinearMomentSystem& system, double r, double rank_tol) {
  const InstrumentBasis basis = instrument_basis(system.instruments, rank_tol);
  const ProjectedSystem ps = project(basis.q, raw_blocks(system));
  return least_squares(ps.a(r), ps.b(r), concentrated_names(system), rank_tol).theta;
}

JTest j_test(const EstimateResult& result) {
  if (result.j_dof <= 0 || !result.j_statistic) {
    throw Error(ErrorKind::NotApplicable, "J test needs an overidentified fit (dof = " +
                                              std::to_string(result.j_dof) + ")");
  }
  JTest out;
  out.statistic = *result.j_statistic;
  out.dof = result.j_dof;
  out.p_value = boost::math::gamma_q(0.5 * static_cast<double>(out.dof), 0.5 * std::max(out.statistic, 0.0));
  return out;
}

nlohmann::json to_json(const EstimateResult& r) {
  nlohmann::json params = nlohmann::json::array();
  const VectorXd se = r.std_errors();
  for (Index j = 0; j < r.estimates.size(); ++j) {
    params.push_back({{"name", r.param_names[static_cast<std::size_t>(j)]},
                      {"estimate", r.estimates[j]},
                      {"std_error", se[j]}});
  }
  nlohmann::json cov = nlohmann::json::array();
  for (Index i = 0; i < r.covariance.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Index j = 0; j < r.covariance.cols(); ++j) row.push_back(r.covariance(i, j));
    cov.push_back(std::move(row));
  }
  nlohmann::json out{{"estimator", r.estimator},
                     {"parameters", params},
                     {"covariance", cov},
                     {"j_statistic", nullptr},
                     {"j_dof", r.j_dof},
                     {"j_p_value", nullptr},
                     {"n_rows", r.n_rows},
                     {"n_clusters", r.n_clusters},
                     {"n_instruments", r.n_instruments},
                     {"instrument_rank", r.instrument_rank},
                     {"condition_number", r.condition_number},
                     {"converged", r.converged},
                     {"iterations", r.iterations},
                     {"objective_value", r.objective_value},
                     {"gradient_norm", r.gradient_norm}};
  if (r.j_statistic && r.j_dof > 0) {
    const JTest j = j_test(r);
    out["j_statistic"] = j.statistic;
    out["j_p_value"] = j.p_value;
  }
  return out;
}

}  // namespace tobitiv
