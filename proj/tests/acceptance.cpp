// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails. Monte Carlo summaries are written to
// ./acceptance_out for inspection.

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tobitiv/errors.hpp"
#include "tobitiv/experiment.hpp"
#include "tobitiv/io.hpp"

using namespace tobitiv;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

const std::string kOutDir = "acceptance_out";

int workers() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double d : v) out[i++] = d;
  return out;
}

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[fail] " << what << "; ";
    }
  }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

MonteCarloResult run_study(const std::string& name, const PanelConfig& panel, const EstimatorConfig& est,
                           std::vector<Index> sizes, int reps, std::uint64_t seed) {
  ExperimentConfig c;
  c.panel = panel;
  c.estimator = est;
  c.replications = reps;
  c.sample_sizes = std::move(sizes);
  c.master_seed = seed;
  const MonteCarloResult r = run_monte_carlo(c, workers());
  std::filesystem::create_directories(kOutDir);
  write_text_file(kOutDir + "/" + name + "_summary.csv", summary_csv(r.summary));
  write_text_file(kOutDir + "/" + name + "_replications.csv", replications_csv(r));
  return r;
}

const ParameterSummary& find(const MonteCarloResult& r, Index n, const std::string& param) {
  for (const auto& s : r.summary) {
    if (s.n_individuals == n && s.parameter == param) return s;
  }
  throw Error(ErrorKind::Domain, "no summary for " + param + " at N = " + std::to_string(n));
}

double univariate_oracle(double mu, double sigma2, int k) {
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

double max_rel_diff(const MatrixXd& a, const MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1e-300, b.cwiseAbs().maxCoeff());
}

void identity_verification(Outcome& o) {
  VerifyConfig c;
  c.km.clear();
  for (int k = 1; k <= 3; ++k) {
    for (int m = 1; m <= 3; ++m) c.km.emplace_back(k, m);
  }
  const VerifyReport r = run_verify(c, workers());
  o.detail << "points=" << c.points << " rows=" << r.rows.size() << " max|residual|=" << fmt(r.max_abs_residual);
  o.require(r.rows.size() == 450, "expected 450 rows");
  o.require(r.max_abs_residual < 1e-6, "max residual >= 1e-6");
}

void oracle_agreement(Outcome& o) {
  VerifyConfig grid;
  grid.points = 20;
  grid.seed = 2024;
  const auto points = grid.grid();
  double worst = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const MomentQuery q{1 + int(i % 3), 1 + int((i / 3) % 3)};
    const double quad = bivariate_truncated_moment_quad(points[i], q, 1e-10);
    const MonteCarloMoment mc = bivariate_truncated_moment_mc(points[i], q, 10'000'000, 100 + i);
    const double z = std::abs(mc.estimate - quad) / mc.std_error;
    worst = std::max(worst, z);
    o.require(z < 4.0, "point " + std::to_string(i) + " differs by " + fmt(z) + " MC SE");
  }
  o.detail << "20 points, 1e7 draws each, worst |quad - mc| = " << fmt(worst) << " SE";
}

void univariate_recursion(Outcome& o) {
  std::mt19937_64 gen(99);
  std::uniform_real_distribution<double> mu(-2.0, 2.0), var(0.25, 4.0);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const double m = mu(gen), v = var(gen);
    for (int k = 0; k <= 5; ++k) {
      worst = std::max(worst, std::abs(univariate_truncated_moment({m, v}, k) - univariate_oracle(m, v, k)));
    }
  }
  const double mean = univariate_truncated_moment({0.0, 1.0}, 1);
  o.detail << "max |recursion - quadrature| = " << fmt(worst) << ", E[U|U>0] = " << format_number(mean);
  o.require(worst < 1e-8, "recursion differs from quadrature by >= 1e-8");
  o.require(std::abs(mean - 0.797884560803) < 1e-9, "E[U|U>0] at the standard normal");
}

void cross_section(Outcome& o) {
  PanelConfig p = PanelConfig::defaults(ModelVariant::CrossSection, 10000, 1, vec({1.0}), 0);
  p.x_dist = {Distribution::normal(0.3583, 1.0)};
  const double censored = censoring_rate(simulate(p));
  const MonteCarloResult r = run_study("cross_section", p, EstimatorConfig{}, {10000}, 200, 404);
  o.detail << "censoring=" << fmt(censored);
  for (const std::string name : {"beta[0]", "sigma2"}) {
    const ParameterSummary& s = find(r, 10000, name);
    o.detail << " " << name << ": bias=" << fmt(s.mean_bias) << " mcse=" << fmt(s.mc_se_of_mean)
             << " cover=" << fmt(s.coverage_95) << " fail=" << s.n_failed << ";";
    o.require(std::abs(s.mean_bias) < 2.0 * s.mc_se_of_mean, name + " bias >= 2 MC SE");
    o.require(s.coverage_95 >= 0.90 && s.coverage_95 <= 0.98, name + " coverage outside [0.90, 0.98]");
  }
}

struct VariantCase {
  std::string name;
  PanelConfig panel;
};

std::vector<VariantCase> panel_cases() {
  const VectorXd beta = vec({1.0, -0.5});
  std::vector<VariantCase> out;

  PanelConfig ie = PanelConfig::defaults(ModelVariant::IndependentErrors, 1000, 2, beta, 0);
  ie.error_cov = vec({1.0, 1.5}).asDiagonal();
  out.push_back({"IndependentErrors", ie});

  PanelConfig ns = PanelConfig::defaults(ModelVariant::NonStationary, 1000, 2, beta, 0);
  ns.error_cov << 1.0, 0.5, 0.5, 2.0;
  out.push_back({"NonStationary", ns});

  PanelConfig fl = PanelConfig::defaults(ModelVariant::FactorLoading, 1000, 2, beta, 0);
  fl.factor_loadings = vec({1.0, 1.5});
  out.push_back({"FactorLoading", fl});

  out.push_back({"VarianceFE", PanelConfig::defaults(ModelVariant::VarianceFE, 1000, 3, beta, 0)});

  PanelConfig av = PanelConfig::defaults(ModelVariant::AdditiveVariance, 1000, 3, beta, 0);
  av.error_cov = vec({0.5, 1.0, 1.5}).asDiagonal();
  out.push_back({"AdditiveVariance", av});

  out.push_back({"SlopeFE", PanelConfig::defaults(ModelVariant::SlopeFE, 1000, 2, beta, 0)});
  return out;
}

void panel_consistency(Outcome& o) {
  const std::vector<Index> sizes = {1000, 4000, 16000};
  std::uint64_t seed = 500;
  for (const auto& vc : panel_cases()) {
    const MonteCarloResult r = run_study("panel_" + vc.name, vc.panel, EstimatorConfig{}, sizes, 200, ++seed);
    o.require(!r.abort_reason, vc.name + " aborted: " + r.abort_reason.value_or(""));
    int failed = 0;
    for (Index n : sizes) failed += find(r, n, r.param_names.front()).n_failed;
    o.detail << vc.name << " (failed " << failed << "):";
    for (const auto& p : r.param_names) {
      const double r0 = find(r, 1000, p).rmse, r1 = find(r, 4000, p).rmse, r2 = find(r, 16000, p).rmse;
      const ParameterSummary& big = find(r, 16000, p);
      o.detail << " " << p << " rmse " << fmt(r0) << ">" << fmt(r1) << ">" << fmt(r2) << " bias/mcse "
               << fmt(big.mean_bias / big.mc_se_of_mean) << ";";
      o.require(r0 > r1 && r1 > r2, vc.name + " " + p + " RMSE not strictly decreasing");
      o.require(std::abs(big.mean_bias) < 3.0 * big.mc_se_of_mean, vc.name + " " + p + " bias >= 3 MC SE at N=16000");
    }
    o.detail << " ";
  }
}

void fixed_effects_necessity(Outcome& o) {
  const PanelConfig panel = panel_cases().front().panel;
  EstimatorConfig pooled;
  pooled.method = EstimatorMethod::CrossSection;
  const MonteCarloResult cs = run_study("pooled_cross_section", panel, pooled, {16000}, 200, 601);
  const MonteCarloResult pw = run_study("pairwise_reference", panel, EstimatorConfig{}, {16000}, 200, 601);
  for (const std::string name : {"beta[0]", "beta[1]"}) {
    const double b_cs = std::abs(find(cs, 16000, name).mean_bias);
    const double b_pw = std::abs(find(pw, 16000, name).mean_bias);
    o.detail << name << ": |bias| pooled=" << fmt(b_cs) << " pairwise=" << fmt(b_pw) << " ratio=" << fmt(b_cs / b_pw)
             << "; ";
    o.require(b_cs > 10.0 * b_pw, name + " pooled bias is not 10x the pairwise bias");
  }
}

void identities(Outcome& o) {
  const PanelDataset ie = simulate(PanelConfig::defaults(ModelVariant::IndependentErrors, 2000, 2, vec({1.0, -0.5}), 31));

  // Nesting: the (k, m) = (1, 1) condition is the independent-errors condition.
  const MomentSystem ts = build_pairwise_independent(ie, 0, 1);
  const MomentSystem nested = build_pairwise_nonstationary(ie, 0, 1, 1, 1);
  const double nest = std::max({max_rel_diff(nested.dependent, ts.dependent),
                                max_rel_diff(nested.regressors, ts.regressors),
                                max_rel_diff(nested.instruments, ts.instruments)});
  o.require(nest <= 1e-12, "nesting differs by " + fmt(nest));

  // Antisymmetry under t <-> s.
  const MomentSystem st = build_pairwise_independent(ie, 1, 0);
  double anti = max_rel_diff(-st.dependent, ts.dependent);
  for (const auto& name : ts.param_names) {
    anti = std::max(anti, max_rel_diff(-st.regressors.col(st.param_index(name)), ts.regressors.col(ts.param_index(name))));
  }
  o.require(anti <= 1e-12, "antisymmetry differs by " + fmt(anti));

  // Triple cancellation: the cyclic sum of pairwise conditions loses the
  // individual-variance column and reproduces the triple condition.
  const PanelDataset vfe = simulate(PanelConfig::defaults(ModelVariant::VarianceFE, 2000, 3, vec({1.0, -0.5}), 32));
  const MomentSystem triple = build_triple_variance_fe(vfe, 0, 1, 2);
  const std::array<std::pair<Index, Index>, 3> cycle = {{{0, 1}, {1, 2}, {2, 0}}};
  VectorXd dep = VectorXd::Zero(triple.rows()), var = VectorXd::Zero(triple.rows()), scale = var;
  MatrixXd reg = MatrixXd::Zero(triple.rows(), 2);
  for (const auto& [t, s] : cycle) {
    const MomentSystem p = build_pairwise_independent(vfe, t, s);
    std::map<Index, Index> row_of;
    for (Index r = 0; r < p.rows(); ++r) row_of[p.cluster[r]] = r;
    const Index ct = p.param_index("sigma2[" + std::to_string(t) + "]");
    const Index cs = p.param_index("sigma2[" + std::to_string(s) + "]");
    for (Index r = 0; r < triple.rows(); ++r) {
      const Index pr = row_of.at(triple.cluster[r]);
      dep[r] += p.dependent[pr];
      reg.row(r) += p.regressors.row(pr).head(2);
      var[r] += p.regressors(pr, ct) + p.regressors(pr, cs);
      scale[r] += std::abs(p.regressors(pr, ct)) + std::abs(p.regressors(pr, cs));
    }
  }
  const double cancel = (var.cwiseAbs().array() / scale.array()).maxCoeff();
  const double cyc = std::max(max_rel_diff(dep, triple.dependent), max_rel_diff(reg, triple.regressors));
  o.require(triple.rows() > 100, "too few triple rows");
  o.require(cancel <= 1e-12, "individual-variance column does not cancel: " + fmt(cancel));
  o.require(cyc <= 1e-12, "cyclic sum differs from the triple condition by " + fmt(cyc));

  // Instrument scale invariance of 2SLS.
  const EstimateResult base = two_stage_least_squares(ts);
  double inv = 0.0;
  for (double c : {1e3, -0.01}) {
    MomentSystem scaled = ts;
    scaled.instruments *= c;
    const EstimateResult fit = two_stage_least_squares(scaled);
    inv = std::max({inv, max_rel_diff(fit.estimates, base.estimates), max_rel_diff(fit.covariance, base.covariance)});
  }
  o.require(inv <= 1e-10, "instrument rescaling changes the fit by " + fmt(inv));

  // Just-identified IV equals the hand formula (Z'X)^{-1} Z'y.
  MomentSystem hand;
  hand.param_names = {"b"};
  hand.dependent = vec({2.0, 4.0});
  hand.regressors = vec({1.0, 2.0});
  hand.instruments = vec({1.0, 1.0});
  hand.cluster = {0, 1};
  hand.periods = {{0}, {0}};
  const double hand_err = std::abs(two_stage_least_squares(hand).estimates[0] - 2.0);
  MomentSystem just = ts;
  just.instruments = ts.instruments.leftCols(ts.n_params() + 1).rightCols(ts.n_params());
  const VectorXd formula =
      (just.instruments.transpose() * just.regressors).lu().solve(just.instruments.transpose() * just.dependent);
  const double just_err = max_rel_diff(two_stage_least_squares(just).estimates, formula);
  o.require(hand_err <= 1e-12, "hand IV differs by " + fmt(hand_err));
  o.require(just_err <= 1e-10, "just-identified IV differs from the formula by " + fmt(just_err));

  o.detail << "nesting=" << fmt(nest) << " antisymmetry=" << fmt(anti) << " cancellation=" << fmt(cancel)
           << " cyclic=" << fmt(cyc) << " scale=" << fmt(inv) << " hand_iv=" << fmt(hand_err)
           << " just_iv=" << fmt(just_err);
}

void j_test_size_power(Outcome& o) {
  const PanelConfig correct = panel_cases().front().panel;
  const MonteCarloResult size = run_study("j_size", correct, EstimatorConfig{}, {4000}, 500, 801);
  const double rate0 = find(size, 4000, size.param_names.front()).j_reject_5pct;

  PanelConfig wrong = PanelConfig::defaults(ModelVariant::FactorLoading, 1000, 2, vec({1.0, -0.5}), 0);
  wrong.factor_loadings = vec({1.0, 2.0});
  EstimatorConfig pairwise;
  pairwise.method = EstimatorMethod::Pairwise;
  const MonteCarloResult power = run_study("j_power", wrong, pairwise, {16000}, 200, 802);
  const double rate1 = find(power, 16000, power.param_names.front()).j_reject_5pct;

  o.detail << "size (N=4000, 500 reps)=" << fmt(rate0) << " power (N=16000, loadings 1,2)=" << fmt(rate1);
  o.require(rate0 >= 0.02 && rate0 <= 0.09, "size outside [0.02, 0.09]");
  o.require(rate1 > 0.5, "power not above 0.5");
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria = {
      {"product-moment identity on a 50-point grid", identity_verification},
      {"quadrature agrees with Monte Carlo", oracle_agreement},
      {"univariate recursion", univariate_recursion},
      {"cross-section estimator", cross_section},
      {"panel consistency per variant", panel_consistency},
      {"fixed effects necessity", fixed_effects_necessity},
      {"identity and degeneracy suite", identities},
      {"J-test size and power", j_test_size_power},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "[error] " << e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failures;
    std::printf("criterion %zu: %s  %s (%.1fs)\n  %s\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                secs, o.detail.str().c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", int(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
