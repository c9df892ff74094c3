#include "tobitiv/moments.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "tobitiv/errors.hpp"
#include "tobitiv/io.hpp"

namespace tobitiv {

using Eigen::MatrixXd;
using Eigen::VectorXd;

InstrumentSet parse_instrument_set(std::string_view name) {
  if (name == "default") return InstrumentSet::Default;
  if (name == "difference") return InstrumentSet::Difference;
  if (name == "linear") return InstrumentSet::Linear;
  throw ConfigError("estimator.instruments",
                    "expected 'default', 'difference' or 'linear', got '" + std::string(name) + "'");
}

std::string_view to_string(InstrumentSet s) {
  switch (s) {
    case InstrumentSet::Default: return "default";
    case InstrumentSet::Difference: return "difference";
    case InstrumentSet::Linear: return "linear";
  }
  return "default";
}

PairRow MomentSystem::row(Index r) const {
  return {dependent[r], regressors.row(r).transpose(), instruments.row(r).transpose(), cluster[r], periods[r]};
}

Index MomentSystem::param_index(const std::string& name) const {
  const auto it = std::find(param_names.begin(), param_names.end(), name);
  return it == param_names.end() ? -1 : static_cast<Index>(it - param_names.begin());
}

void MomentSystem::validate() const {
  const Index n = rows();
  if (regressors.rows() != n || instruments.rows() != n || static_cast<Index>(cluster.size()) != n ||
      static_cast<Index>(periods.size()) != n) {
    throw Error(ErrorKind::Domain, "moment system has inconsistent row counts");
  }
  if (static_cast<Index>(param_names.size()) != regressors.cols()) {
    throw Error(ErrorKind::Domain, "moment system has a parameter label per regressor column mismatch");
  }
  if (!dependent.allFinite() || !regressors.allFinite() || !instruments.allFinite()) {
    throw Error(ErrorKind::Domain, "moment system contains non-finite entries");
  }
}

namespace {

std::string beta_name(Index k) { return "beta[" + std::to_string(k) + "]"; }

std::vector<std::string> beta_names(Index k_reg) {
  std::vector<std::string> names;
  for (Index k = 0; k < k_reg; ++k) names.push_back(beta_name(k));
  return names;
}

std::string period_name(const char* stem, Index t) { return std::string(stem) + "[" + std::to_string(t) + "]"; }

std::string cov_name(Index t, Index s) {
  return "cov[" + std::to_string(std::min(t, s)) + "," + std::to_string(std::max(t, s)) + "]";
}

// Accumulates rows, then packs them into dense storage.
class RowCollector {
 public:
  RowCollector(Index n_params, Index n_instruments, Index reserve)
      : n_params_(n_params), n_instruments_(n_instruments) {
    dep_.reserve(static_cast<std::size_t>(reserve));
    reg_.reserve(static_cast<std::size_t>(reserve * n_params));
    inst_.reserve(static_cast<std::size_t>(reserve * n_instruments));
  }

  void add(double dependent, const VectorXd& regressors, const VectorXd& instruments, Index individual,
           std::vector<Index> periods) {
    dep_.push_back(dependent);
    reg_.insert(reg_.end(), regressors.data(), regressors.data() + n_params_);
    inst_.insert(inst_.end(), instruments.data(), instruments.data() + n_instruments_);
    cluster_.push_back(individual);
    periods_.push_back(std::move(periods));
  }

  MomentSystem finish(std::vector<std::string> names, const char* what) && {
    if (dep_.empty()) {
      throw Error(ErrorKind::EmptySystem, std::string(what) + ": no observations with strictly positive outcomes");
    }
    const auto n = static_cast<Index>(dep_.size());
    MomentSystem sys;
    sys.param_names = std::move(names);
    sys.dependent = Eigen::Map<const VectorXd>(dep_.data(), n);
    sys.regressors = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        reg_.data(), n, n_params_);
    sys.instruments = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        inst_.data(), n, n_instruments_);
    sys.cluster = std::move(cluster_);
    sys.periods = std::move(periods_);
    return sys;
  }

 private:
  Index n_params_;
  Index n_instruments_;
  std::vector<double> dep_, reg_, inst_;
  std::vector<Index> cluster_;
  std::vector<std::vector<Index>> periods_;
};

void check_period(const PanelDataset& ds, Index t, const char* name) {
  if (t < 0 || t >= ds.n_periods()) {
    throw Error(ErrorKind::Domain, std::string("period ") + name + " = " + std::to_string(t) + " is out of range");
  }
}

void check_pair(const PanelDataset& ds, Index t, Index s) {
  check_period(ds, t, "t");
  check_period(ds, s, "s");
  if (t == s) throw Error(ErrorKind::Domain, "periods t and s must differ");
}

void check_triple(const PanelDataset& ds, Index t, Index s, Index tau) {
  check_period(ds, t, "t");
  check_period(ds, s, "s");
  check_period(ds, tau, "tau");
  if (t == s || s == tau || t == tau) throw Error(ErrorKind::Domain, "periods t, s and tau must be distinct");
}

// 1, v and every product v_a v_b with a <= b.
VectorXd quadratic_basis(const VectorXd& v) {
  const Index n = v.size();
  VectorXd out(1 + n + n * (n + 1) / 2);
  out[0] = 1.0;
  out.segment(1, n) = v;
  Index c = 1 + n;
  for (Index a = 0; a < n; ++a) {
    for (Index b = a; b < n; ++b) out[c++] = v[a] * v[b];
  }
  return out;
}

VectorXd concat(std::initializer_list<const VectorXd*> parts) {
  Index n = 0;
  for (const auto* p : parts) n += p->size();
  VectorXd out(n);
  Index c = 0;
  for (const auto* p : parts) {
    out.segment(c, p->size()) = *p;
    c += p->size();
  }
  return out;
}

VectorXd cross_instruments(InstrumentSet set, const VectorXd& x) {
  if (set == InstrumentSet::Default) return quadratic_basis(x);
  const Index k = x.size();
  const bool squares = set != InstrumentSet::Linear;
  VectorXd out(squares ? 1 + 2 * k : 1 + k);
  out[0] = 1.0;
  out.segment(1, k) = x;
  if (squares) out.tail(k) = x.array().square();
  return out;
}

// Under exchangeable periods the cyclic triple regressors are alternating
// functions of (t, s, tau), so only the alternating part of an instrument
// carries identifying variation. For a single regressor no polynomial of
// degree <= 2 has one; the Vandermonde product
// (x_t - x_s)(x_s - x_tau)(x_tau - x_t) supplies it.
VectorXd triple_instruments(InstrumentSet set, const VectorXd& xt, const VectorXd& xs, const VectorXd& xtau) {
  const Index k = xt.size();
  if (set == InstrumentSet::Default) {
    const VectorXd all = concat({&xt, &xs, &xtau});
    const VectorXd quad = quadratic_basis(all);
    const VectorXd vandermonde = ((xt - xs).array() * (xs - xtau).array() * (xtau - xt).array()).matrix();
    return concat({&quad, &vandermonde});
  }
  const Index blocks = set == InstrumentSet::Difference ? 6 : 3;
  VectorXd out(1 + blocks * k);
  out[0] = 1.0;
  out.segment(1, k) = xt;
  out.segment(1 + k, k) = xs;
  out.segment(1 + 2 * k, k) = xtau;
  if (blocks > 3) {
    out.segment(1 + 3 * k, k) = (xt - xs).array().square();
    out.segment(1 + 4 * k, k) = (xs - xtau).array().square();
    out.segment(1 + 5 * k, k) = (xtau - xt).array().square();
  }
  return out;
}

bool positive(double y) { return y > 0.0; }

}  // namespace

VectorXd default_instruments(const Eigen::Ref<const VectorXd>& x_t, const Eigen::Ref<const VectorXd>& x_s,
                             std::optional<double> z_t, std::optional<double> z_s) {
  const Index k = x_t.size();
  const bool with_z = z_t.has_value() && z_s.has_value();
  VectorXd out(1 + 4 * k + (with_z ? 5 : 0));
  const VectorXd diff = x_t - x_s;
  out << 1.0, x_t, x_s, diff, diff.array().square().matrix(), VectorXd::Zero(with_z ? 5 : 0);
  if (with_z) out.tail(5) << *z_t, *z_s, *z_t * *z_s, *z_t * *z_t, *z_s * *z_s;
  return out;
}

VectorXd pair_instruments(InstrumentSet set, const Eigen::Ref<const VectorXd>& x_t, const Eigen::Ref<const VectorXd>& x_s,
                          std::optional<double> z_t, std::optional<double> z_s) {
  const Index k = x_t.size();
  const bool with_z = z_t.has_value() && z_s.has_value();
  if (set == InstrumentSet::Linear) {
    VectorXd out(1 + 2 * k + (with_z ? 2 : 0));
    out << 1.0, x_t, x_s, VectorXd::Zero(with_z ? 2 : 0);
    if (with_z) out.tail(2) << *z_t, *z_s;
    return out;
  }
  if (set == InstrumentSet::Difference) return default_instruments(x_t, x_s, z_t, z_s);
  VectorXd v(2 * k + (with_z ? 2 : 0));
  v << x_t, x_s, VectorXd::Zero(with_z ? 2 : 0);
  if (with_z) v.tail(2) << *z_t, *z_s;
  return quadratic_basis(v);
}

MomentSystem build_cross_section(const PanelDataset& ds, int k, InstrumentSet set) {
  if (k < 1) throw Error(ErrorKind::Domain, "cross-section moment order k must be >= 1");
  const Index k_reg = ds.n_regressors();
  const Index n_inst = cross_instruments(set, VectorXd::Zero(k_reg)).size();
  RowCollector rows(k_reg + 1, n_inst, ds.y.size());
  VectorXd reg(k_reg + 1);
  for (Index i = 0; i < ds.n_individuals(); ++i) {
    for (Index t = 0; t < ds.n_periods(); ++t) {
      const double y = ds.y(i, t);
      if (!positive(y)) continue;
      const VectorXd x = ds.x_at(i, t);
      const double yk = std::pow(y, k);
      reg << yk * x, k * std::pow(y, k - 1);
      rows.add(yk * y, reg, cross_instruments(set, x), i, {t});
    }
  }
  auto names = beta_names(k_reg);
  names.push_back("sigma2");
  return std::move(rows).finish(std::move(names), "cross-section system");
}

MomentSystem build_pairwise_independent(const PanelDataset& ds, Index t, Index s, InstrumentSet set) {
  check_pair(ds, t, s);
  const Index k_reg = ds.n_regressors();
  const Index n_inst = pair_instruments(set, VectorXd::Zero(k_reg), VectorXd::Zero(k_reg), {}, {}).size();
  RowCollector rows(k_reg + 2, n_inst, ds.n_individuals());
  VectorXd reg(k_reg + 2);
  for (Index i = 0; i < ds.n_individuals(); ++i) {
    const double yt = ds.y(i, t), ys = ds.y(i, s);
    if (!positive(yt) || !positive(ys)) continue;
    const VectorXd xt = ds.x_at(i, t), xs = ds.x_at(i, s);
    // y_t^2 y_s - y_s^2 y_t = y_t y_s (x_t - x_s)'b + y_s s_t^2 - y_t s_s^2 + xi
    reg << yt * ys * (xt - xs), ys, -yt;
    rows.add(yt * yt * ys - ys * ys * yt, reg, pair_instruments(set, xt, xs, {}, {}), i, {t, s});
  }
  auto names = beta_names(k_reg);
  names.push_back(period_name("sigma2", t));
  names.push_back(period_name("sigma2", s));
  return std::move(rows).finish(std::move(names), "pairwise system");
}

MomentSystem build_pairwise_nonstationary(const PanelDataset& ds, Index t, Index s, int k, int m,
                                          InstrumentSet set) {
  check_pair(ds, t, s);
  if (k < 1 || m < 1) throw Error(ErrorKind::Domain, "moment exponents k and m must be >= 1");
  const Index k_reg = ds.n_regressors();
  const Index n_inst = pair_instruments(set, VectorXd::Zero(k_reg), VectorXd::Zero(k_reg), {}, {}).size();
  RowCollector rows(k_reg + 2, n_inst, ds.n_individuals());
  VectorXd reg(k_reg + 2);
  for (Index i = 0; i < ds.n_individuals(); ++i) {
    const double yt = ds.y(i, t), ys = ds.y(i, s);
    if (!positive(yt) || !positive(ys)) continue;
    const VectorXd xt = ds.x_at(i, t), xs = ds.x_at(i, s);
    const double ytk = std::pow(yt, k), ysm = std::pow(ys, m);
    reg << ytk * ysm * (xt - xs), k * std::pow(yt, k - 1) * ysm, -m * std::pow(ys, m - 1) * ytk;
    rows.add(ytk * yt * ysm - ysm * ys * ytk, reg, pair_instruments(set, xt, xs, {}, {}), i, {t, s});
  }
  auto names = beta_names(k_reg);
  names.push_back(period_name("sigma2", t) + "-" + cov_name(t, s));
  names.push_back(period_name("sigma2", s) + "-" + cov_name(t, s));
  return std::move(rows).finish(std::move(names), "pairwise (k, m) system");
}

NonlinearMomentSystem build_factor_loading(const PanelDataset& ds, Index t, Index s, InstrumentSet set) {
  check_pair(ds, t, s);
  const Index k_reg = ds.n_regressors();
  std::vector<Index> keep;
  for (Index i = 0; i < ds.n_individuals(); ++i) {
    if (positive(ds.y(i, t)) && positive(ds.y(i, s))) keep.push_back(i);
  }
  if (keep.empty()) throw Error(ErrorKind::EmptySystem, "factor-loading system: no pairs with positive outcomes");

  const auto n = static_cast<Index>(keep.size());
  NonlinearMomentSystem sys;
  sys.t = t;
  sys.s = s;
  sys.y_t.resize(n);
  sys.y_s.resize(n);
  sys.x_t.resize(n, k_reg);
  sys.x_s.resize(n, k_reg);
  const Index n_inst = pair_instruments(set, VectorXd::Zero(k_reg), VectorXd::Zero(k_reg), {}, {}).size();
  sys.instruments.resize(n, n_inst);
  sys.cluster = keep;
  for (Index r = 0; r < n; ++r) {
    const Index i = keep[r];
    sys.y_t[r] = ds.y(i, t);
    sys.y_s[r] = ds.y(i, s);
    const VectorXd xt = ds.x_at(i, t), xs = ds.x_at(i, s);
    sys.x_t.row(r) = xt.transpose();
    sys.x_s.row(r) = xs.transpose();
    sys.instruments.row(r) = pair_instruments(set, xt, xs, {}, {}).transpose();
  }
  const std::string ts = std::to_string(t) + "," + std::to_string(s);
  sys.param_names = beta_names(k_reg);
  sys.param_names.push_back("r[" + std::to_string(t) + "/" + std::to_string(s) + "]");
  sys.param_names.push_back("a[" + ts + "]");
  sys.param_names.push_back("b[" + ts + "]");
  return sys;
}

VectorXd NonlinearMomentSystem::residuals(const VectorXd& theta) const {
  if (theta.size() != n_params()) throw Error(ErrorKind::Domain, "parameter vector has the wrong length");
  const Index k = n_beta();
  const auto beta = theta.head(k);
  const double r = theta[k], a = theta[k + 1], b = theta[k + 2];
  const VectorXd index = (x_t - r * x_s) * beta;
  const auto yt = y_t.array(), ys = y_s.array();
  return (yt.square() * ys - r * ys.square() * yt - yt * ys * index.array() + a * yt - b * ys).matrix();
}

VectorXd NonlinearMomentSystem::mean_moments(const VectorXd& theta) const {
  return instruments.transpose() * residuals(theta) / static_cast<double>(rows());
}

MomentSystem NonlinearMomentSystem::linear_system(double r) const {
  const Index k = n_beta();
  const auto yt = y_t.array(), ys = y_s.array();
  MomentSystem sys;
  sys.param_names = beta_names(k);
  sys.param_names.push_back(param_names[k + 1]);
  sys.param_names.push_back(param_names[k + 2]);
  sys.dependent = (yt.square() * ys - r * ys.square() * yt).matrix();
  sys.regressors.resize(rows(), k + 2);
  sys.regressors.leftCols(k) = (x_t - r * x_s).array().colwise() * (yt * ys);
  sys.regressors.col(k) = -y_t;
  sys.regressors.col(k + 1) = y_s;
  sys.instruments = instruments;
  sys.cluster = cluster;
  sys.periods.assign(static_cast<std::size_t>(rows()), {t, s});
  return sys;
}

MomentSystem build_triple_variance_fe(const PanelDataset& ds, Index t, Index s, Index tau, InstrumentSet set) {
  check_triple(ds, t, s, tau);
  const Index k_reg = ds.n_regressors();
  const Index n_inst = triple_instruments(set, VectorXd::Zero(k_reg), VectorXd::Zero(k_reg), VectorXd::Zero(k_reg)).size();
  RowCollector rows(k_reg, n_inst, ds.n_individuals());
  for (Index i = 0; i < ds.n_individuals(); ++i) {
    const double yt = ds.y(i, t), ys = ds.y(i, s), yu = ds.y(i, tau);
    if (!positive(yt) || !positive(ys) || !positive(yu)) continue;
    const VectorXd xt = ds.x_at(i, t), xs = ds.x_at(i, s), xu = ds.x_at(i, tau);
    const double dep = (yt * yt * ys - ys * ys * yt) + (ys * ys * yu - yu * yu * ys) + (yu * yu * yt - yt * yt * yu);
    const VectorXd reg = yt * ys * (xt - xs) + ys * yu * (xs - xu) + yu * yt * (xu - xt);
    rows.add(dep, reg, triple_instruments(set, xt, xs, xu), i, {t, s, tau});
  }
  return std::move(rows).finish(beta_names(k_reg), "triple system");
}

MomentSystem build_triple_additive_variance(const PanelDataset& ds, Index t, Index s, Index tau,
                                            InstrumentSet set) {
  check_triple(ds, t, s, tau);
  const Index k_reg = ds.n_regressors();
  const Index n_inst = triple_instruments(set, VectorXd::Zero(k_reg), VectorXd::Zero(k_reg), VectorXd::Zero(k_reg)).size();
  RowCollector rows(k_reg + 3, n_inst, ds.n_individuals());
  VectorXd reg(k_reg + 3);
  for (Index i = 0; i < ds.n_individuals(); ++i) {
    const double yt = ds.y(i, t), ys = ds.y(i, s), yu = ds.y(i, tau);
    if (!positive(yt) || !positive(ys) || !positive(yu)) continue;
    const VectorXd xt = ds.x_at(i, t), xs = ds.x_at(i, s), xu = ds.x_at(i, tau);
    const double dep = (yt * yt * ys - ys * ys * yt) + (ys * ys * yu - yu * yu * ys) + (yu * yu * yt - yt * yt * yu);
    reg << yt * ys * (xt - xs) + ys * yu * (xs - xu) + yu * yt * (xu - xt), yu - yt, ys - yu, yt - ys;
    rows.add(dep, reg, triple_instruments(set, xt, xs, xu), i, {t, s, tau});
  }
  auto names = beta_names(k_reg);
  names.push_back(period_name("sigma2", s));
  names.push_back(period_name("sigma2", t));
  names.push_back(period_name("sigma2", tau));
  return std::move(rows).finish(std::move(names), "additive-variance triple system");
}

MomentSystem build_pairwise_slope_fe(const PanelDataset& ds, Index t, Index s, InstrumentSet set) {
  check_pair(ds, t, s);
  if (!ds.z) throw Error(ErrorKind::Domain, "slope fixed-effect system needs z");
  const Index k_reg = ds.n_regressors();
  const Index n_inst = pair_instruments(set, VectorXd::Zero(k_reg), VectorXd::Zero(k_reg), 1.0, 1.0).size();
  RowCollector rows(k_reg + 3, n_inst, ds.n_individuals());
  VectorXd reg(k_reg + 3);
  for (Index i = 0; i < ds.n_individuals(); ++i) {
    const double yt = ds.y(i, t), ys = ds.y(i, s);
    if (!positive(yt) || !positive(ys)) continue;
    const double zt = (*ds.z)(i, t), zs = (*ds.z)(i, s);
    if (!(zt > 0.0) || !(zs > 0.0)) {
      throw Error(ErrorKind::Domain, "z must be strictly positive in qualifying rows (individual " +
                                         std::to_string(i) + ")");
    }
    const VectorXd xt = ds.x_at(i, t), xs = ds.x_at(i, s);
    // Identity applied to (y_t z_s, y_s z_t).
    const double u1 = yt * zs, u2 = ys * zt;
    reg << u1 * u2 * (xt * zs - xs * zt), ys * zt * zs * zs, -yt * zs * zt * zt, zt * zs * (yt * zs - ys * zt);
    rows.add(u1 * u1 * u2 - u2 * u2 * u1, reg, pair_instruments(set, xt, xs, zt, zs), i, {t, s});
  }
  auto names = beta_names(k_reg);
  names.push_back(period_name("sigma2", t));
  names.push_back(period_name("sigma2", s));
  names.push_back(cov_name(t, s));
  return std::move(rows).finish(std::move(names), "slope fixed-effect system");
}

MomentSystem normalize_additive_variance(const MomentSystem& system, Index reference_period) {
  const std::string ref = period_name("sigma2", reference_period);
  const Index drop = system.param_index(ref);
  if (drop < 0) throw Error(ErrorKind::Domain, "system has no parameter " + ref);

  MomentSystem out = system;
  const Index p = system.n_params();
  out.regressors.resize(system.rows(), p - 1);
  out.param_names.clear();
  for (Index c = 0, o = 0; c < p; ++c) {
    if (c == drop) continue;
    out.regressors.col(o++) = system.regressors.col(c);
    std::string name = system.param_names[c];
    if (name.rfind("sigma2[", 0) == 0) name += "-" + ref;
    out.param_names.push_back(std::move(name));
  }
  return out;
}

MomentSystem stack(std::span<const MomentSystem> systems) {
  if (systems.empty()) throw Error(ErrorKind::EmptySystem, "nothing to stack");

  MomentSystem out;
  std::vector<std::vector<Index>> column_map;
  std::vector<Index> inst_offset;
  Index n_inst = 0, n_rows = 0;
  for (const auto& sys : systems) {
    sys.validate();
    std::vector<Index> map;
    for (const auto& name : sys.param_names) {
      Index idx = out.param_index(name);
      if (idx < 0) {
        out.param_names.push_back(name);
        idx = static_cast<Index>(out.param_names.size()) - 1;
      }
      map.push_back(idx);
    }
    column_map.push_back(std::move(map));
    inst_offset.push_back(n_inst);
    n_inst += sys.n_instruments();
    n_rows += sys.rows();
  }

  struct Key {
    Index cluster;
    std::size_t source;
    Index row;
  };
  std::vector<Key> order;
  order.reserve(static_cast<std::size_t>(n_rows));
  for (std::size_t k = 0; k < systems.size(); ++k) {
    for (Index r = 0; r < systems[k].rows(); ++r) order.push_back({systems[k].cluster[r], k, r});
  }
  std::stable_sort(order.begin(), order.end(), [](const Key& a, const Key& b) {
    return a.cluster != b.cluster ? a.cluster < b.cluster : a.source < b.source;
  });

  const auto p = static_cast<Index>(out.param_names.size());
  out.dependent.resize(n_rows);
  out.regressors = MatrixXd::Zero(n_rows, p);
  out.instruments = MatrixXd::Zero(n_rows, n_inst);
  out.cluster.resize(static_cast<std::size_t>(n_rows));
  out.periods.resize(static_cast<std::size_t>(n_rows));
  for (Index o = 0; o < n_rows; ++o) {
    const Key& key = order[static_cast<std::size_t>(o)];
    const MomentSystem& src = systems[key.source];
    out.dependent[o] = src.dependent[key.row];
    for (Index c = 0; c < src.n_params(); ++c) out.regressors(o, column_map[key.source][c]) += src.regressors(key.row, c);
    out.instruments.row(o).segment(inst_offset[key.source], src.n_instruments()) = src.instruments.row(key.row);
    out.cluster[o] = key.cluster;
    out.periods[o] = src.periods[key.row];
  }
  return out;
}

namespace {

std::vector<Index> bracket_indices(const std::string& label, std::size_t open, char sep) {
  std::vector<Index> out;
  std::size_t pos = open + 1;
  while (pos < label.size() && label[pos] != ']') {
    std::size_t used = 0;
    out.push_back(std::stoll(label.substr(pos), &used));
    pos += used;
    if (pos < label.size() && label[pos] == sep) ++pos;
  }
  return out;
}

double base_parameter(const PanelConfig& c, const std::string& label) {
  const auto fail = [&]() -> double {
    throw Error(ErrorKind::Domain, "no true value for parameter '" + label + "' under variant " +
                                       std::string(to_string(c.variant)));
  };
  const std::size_t open = label.find('[');
  const std::string stem = label.substr(0, open);
  const Eigen::MatrixXd& sigma = c.error_cov;
  const auto period_ok = [&](Index t) { return t >= 0 && t < c.n_periods; };
  try {
    if (stem == "sigma2" && open == std::string::npos) return sigma(0, 0);
    if (open == std::string::npos) return fail();
    if (stem == "beta") {
      const Index k = bracket_indices(label, open, ',').at(0);
      return k >= 0 && k < c.beta.size() ? c.beta[k] : fail();
    }
    if (stem == "sigma2") {
      const Index t = bracket_indices(label, open, ',').at(0);
      return period_ok(t) ? sigma(t, t) : fail();
    }
    if (stem == "cov") {
      const auto ts = bracket_indices(label, open, ',');
      return period_ok(ts.at(0)) && period_ok(ts.at(1)) ? sigma(ts[0], ts[1]) : fail();
    }
    if (stem == "r" || stem == "a" || stem == "b") {
      if (!c.factor_loadings) return fail();
      const auto ts = bracket_indices(label, open, stem == "r" ? '/' : ',');
      const Index t = ts.at(0), s = ts.at(1);
      if (!period_ok(t) || !period_ok(s)) return fail();
      const double r = (*c.factor_loadings)[t] / (*c.factor_loadings)[s];
      if (stem == "r") return r;
      if (stem == "a") return sigma(s, s) * r - sigma(t, s);
      return sigma(t, t) - sigma(t, s) * r;
    }
  } catch (const std::logic_error&) {
  }
  return fail();
}

}  // namespace

double true_parameter(const PanelConfig& config, const std::string& label) {
  // Contrasts "x-y" split at the top level, outside brackets.
  int depth = 0;
  for (std::size_t i = 0; i < label.size(); ++i) {
    if (label[i] == '[') ++depth;
    if (label[i] == ']') --depth;
    if (label[i] == '-' && depth == 0) {
      return true_parameter(config, label.substr(0, i)) - true_parameter(config, label.substr(i + 1));
    }
  }
  return base_parameter(config, label);
}

VectorXd true_parameters(const PanelConfig& config, const std::vector<std::string>& labels) {
  VectorXd out(static_cast<Index>(labels.size()));
  for (std::size_t j = 0; j < labels.size(); ++j) out[static_cast<Index>(j)] = true_parameter(config, labels[j]);
  return out;
}

void write_moment_system_csv(const MomentSystem& system, const std::string& path) {
  std::string text = "individual,periods,dependent";
  for (const auto& name : system.param_names) text += ",reg:" + name;
  for (Index c = 0; c < system.n_instruments(); ++c) text += ",inst:" + std::to_string(c);
  text += '\n';
  for (Index r = 0; r < system.rows(); ++r) {
    text += std::to_string(system.cluster[r]) + ',';
    for (std::size_t j = 0; j < system.periods[r].size(); ++j) {
      if (j) text += ';';
      text += std::to_string(system.periods[r][j]);
    }
    text += ',' + format_number(system.dependent[r]);
    for (Index c = 0; c < system.n_params(); ++c) text += ',' + format_number(system.regressors(r, c));
    for (Index c = 0; c < system.n_instruments(); ++c) text += ',' + format_number(system.instruments(r, c));
    text += '\n';
  }
  write_text_file(path, text);
}

}  // namespace tobitiv
