#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tobitiv/errors.hpp"
#include "tobitiv/io.hpp"
#include "tobitiv/panel_sim.hpp"

using namespace tobitiv;
namespace fs = std::filesystem;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double d : v) out[i++] = d;
  return out;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tobitiv_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Latent error: y* minus the index and the fixed-effect term.
MatrixXd latent_errors(const PanelDataset& ds) {
  const auto& c = ds.config;
  MatrixXd e(ds.n_individuals(), ds.n_periods());
  for (Index i = 0; i < ds.n_individuals(); ++i) {
    for (Index t = 0; t < ds.n_periods(); ++t) {
      double loading = 1.0;
      if (c.variant == ModelVariant::FactorLoading) loading = (*c.factor_loadings)[t];
      if (c.variant == ModelVariant::SlopeFE) loading = (*ds.z)(i, t);
      e(i, t) = ds.latent_y(i, t) - ds.x_at(i, t).dot(c.beta) - loading * ds.alpha[i];
    }
  }
  return e;
}

MatrixXd sample_cov(const MatrixXd& e) {
  const MatrixXd centered = e.rowwise() - e.colwise().mean();
  return centered.transpose() * centered / double(e.rows() - 1);
}

double correlation(const VectorXd& a, const VectorXd& b) {
  const VectorXd ca = a.array() - a.mean(), cb = b.array() - b.mean();
  return ca.dot(cb) / std::sqrt(ca.squaredNorm() * cb.squaredNorm());
}

}  // namespace

TEST_CASE("zero index panel is censored half the time") {
  PanelConfig c = PanelConfig::defaults(ModelVariant::IndependentErrors, 4, 2, vec({0.0}), 11);
  c.fe = {0.0, 0.0};
  const PanelDataset ds = simulate(c);
  for (Index i = 0; i < 4; ++i) {
    for (Index t = 0; t < 2; ++t) {
      CHECK(ds.alpha[i] == 0.0);
      CHECK(ds.y(i, t) == std::max(0.0, ds.latent_y(i, t)));
    }
  }

  c.n_individuals = 200000;
  CHECK(std::abs(censoring_rate(simulate(c)) - 0.5) < 0.02);
}

TEST_CASE("censoring rate matches the analytic rate") {
  // x ~ N(m, 1), T = 2, alpha = mean(x) + N(0, 1), unit errors: the latent
  // index is N(2m, 4.5), so the rate is Phi(-2m / sqrt(4.5)).
  PanelConfig c = PanelConfig::defaults(ModelVariant::IndependentErrors, 1000, 2, vec({1.0}), 5);
  CHECK(std::abs(censoring_rate(simulate(c)) - 0.5) < 0.03);

  c.x_dist = {Distribution::normal(0.5, 1.0)};
  const double oracle = 0.31867594411696853;
  CHECK(std::abs(censoring_rate(simulate(c)) - oracle) < 0.03);
  c.n_individuals = 100000;
  CHECK(std::abs(censoring_rate(simulate(c)) - oracle) < 0.005);
}

TEST_CASE("censoring rate edge cases") {
  PanelConfig c = PanelConfig::defaults(ModelVariant::IndependentErrors, 50, 2, vec({1.0}), 3);
  c.x_dist = {Distribution::constant(50.0)};
  CHECK(censoring_rate(simulate(c)) == 0.0);

  c.x_dist = {Distribution::normal(0.0, 1.0)};
  c.sampling = Sampling::Truncated;
  CHECK_THROWS_AS(censoring_rate(simulate(c)), Error);
  try {
    censoring_rate(simulate(c));
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::UnsupportedMode);
  }
}

TEST_CASE("truncated sampling keeps only positive cells") {
  PanelConfig c = PanelConfig::defaults(ModelVariant::IndependentErrors, 1000, 2, vec({1.0}), 9);
  c.sampling = Sampling::Truncated;
  const PanelDataset ds = simulate(c);
  const Index retained = ds.retained_cells();
  CHECK(retained < 1000 * 2);
  CHECK(retained > 1000);
  for (Index i = 0; i < ds.n_individuals(); ++i) {
    bool any = false;
    for (Index t = 0; t < 2; ++t) {
      if (ds.observed(i, t)) {
        any = true;
        CHECK(ds.y(i, t) > 0.0);
        CHECK(ds.y(i, t) == ds.latent_y(i, t));
        CHECK(std::isfinite(ds.x(i * 2 + t, 0)));
      } else {
        CHECK(ds.latent_y(i, t) <= 0.0);
        CHECK(std::isnan(ds.x(i * 2 + t, 0)));
      }
    }
    CHECK(any);
  }
}

TEST_CASE("truncated sampling gives up after bounded oversampling") {
  PanelConfig c = PanelConfig::defaults(ModelVariant::IndependentErrors, 3, 2, vec({1.0}), 1);
  c.x_dist = {Distribution::constant(-100.0)};
  c.sampling = Sampling::Truncated;
  try {
    simulate(c);
    FAIL("expected a configuration error");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "sampling");
  }
}

TEST_CASE("simulation is deterministic and order independent") {
  PanelConfig c = PanelConfig::defaults(ModelVariant::SlopeFE, 300, 3, vec({1.0, -0.5}), 77);
  const PanelDataset a = simulate(c), b = simulate(c);
  CHECK(a.y == b.y);
  CHECK(a.x == b.x);
  CHECK(*a.z == *b.z);

  // The first individuals do not depend on how many follow.
  c.n_individuals = 10;
  const PanelDataset small = simulate(c);
  CHECK(small.y == a.y.topRows(10));

  c.seed = 78;
  CHECK(simulate(c).y != small.y);
}

TEST_CASE("error covariance is recovered") {
  MatrixXd sigma(3, 3);
  sigma << 1.0, 0.5, 0.2, 0.5, 2.0, 0.3, 0.2, 0.3, 1.5;
  PanelConfig c = PanelConfig::defaults(ModelVariant::NonStationary, 50000, 3, vec({1.0, -0.5}), 21);
  c.error_cov = sigma;
  PanelDataset ds = simulate(c);
  const MatrixXd e = latent_errors(ds);
  CHECK((sample_cov(e) - sigma).cwiseAbs().maxCoeff() < 0.05);

  // Exogeneity: errors are uncorrelated with every regressor entry.
  double worst = 0.0;
  for (Index t = 0; t < 3; ++t) {
    for (Index s = 0; s < 3; ++s) {
      for (Index k = 0; k < 2; ++k) {
        VectorXd xs(ds.n_individuals());
        for (Index i = 0; i < ds.n_individuals(); ++i) xs[i] = ds.x(i * 3 + s, k);
        worst = std::max(worst, std::abs(correlation(e.col(t), xs)));
      }
    }
  }
  CHECK(worst < 0.02);

  // The fixed effect, by contrast, is correlated with x.
  VectorXd x0(ds.n_individuals());
  for (Index i = 0; i < ds.n_individuals(); ++i) x0[i] = ds.x(i * 3, 0);
  CHECK(correlation(ds.alpha, x0) > 0.2);
}

TEST_CASE("variance structures are recovered") {
  SUBCASE("variance fixed effects") {
    PanelConfig c = PanelConfig::defaults(ModelVariant::VarianceFE, 50000, 3, vec({1.0}), 4);
    const PanelDataset ds = simulate(c);
    const MatrixXd e = latent_errors(ds);
    // Scaled errors are standard normal and independent over time.
    MatrixXd scaled = e.array().colwise() / ds.sigma2_individual.array().sqrt();
    CHECK((sample_cov(scaled) - MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 0.05);
    CHECK(ds.sigma2_individual.minCoeff() >= 0.5);
  }
  SUBCASE("additive variance") {
    PanelConfig c = PanelConfig::defaults(ModelVariant::AdditiveVariance, 50000, 3, vec({1.0}), 4);
    c.error_cov = vec({0.5, 1.0, 1.5}).asDiagonal();
    const PanelDataset ds = simulate(c);
    const MatrixXd e = latent_errors(ds);
    MatrixXd expected = c.error_cov;
    // E[s_i^2] for 0.5 + |N(0, 1)| is 0.5 + sqrt(2 / pi).
    expected.diagonal().array() += 0.5 + 0.79788456080286535588;
    CHECK((sample_cov(e) - expected).cwiseAbs().maxCoeff() < 0.05);
  }
}

TEST_CASE("factor loading ratios are recovered") {
  PanelConfig c = PanelConfig::defaults(ModelVariant::FactorLoading, 50000, 3, vec({1.0}), 8);
  CHECK(c.factor_loadings->isApprox(vec({1.0, 1.5, 2.0})));
  const PanelDataset ds = simulate(c);
  VectorXd slope(3);
  const VectorXd a = ds.alpha.array() - ds.alpha.mean();
  for (Index t = 0; t < 3; ++t) {
    VectorXd resid(ds.n_individuals());
    for (Index i = 0; i < ds.n_individuals(); ++i) resid[i] = ds.latent_y(i, t) - ds.x_at(i, t).dot(c.beta);
    slope[t] = a.dot((resid.array() - resid.mean()).matrix()) / a.squaredNorm();
  }
  CHECK(std::abs(slope[1] / slope[0] - 1.5) < 0.05);
  CHECK(std::abs(slope[2] / slope[0] - 2.0) < 0.05);
  CHECK(std::abs(slope[2] / slope[1] - 2.0 / 1.5) < 0.05);
}

TEST_CASE("slope fixed effects draw positive z") {
  PanelConfig c = PanelConfig::defaults(ModelVariant::SlopeFE, 2000, 2, vec({1.0}), 2);
  const PanelDataset ds = simulate(c);
  REQUIRE(ds.z.has_value());
  CHECK(ds.z->minCoeff() > 0.0);
  const MatrixXd e = latent_errors(ds);
  CHECK(std::abs(e.mean()) < 0.05);
}

TEST_CASE("invalid configurations name the field") {
  auto field_of = [](const PanelConfig& c) {
    try {
      c.validate();
    } catch (const ConfigError& e) {
      return e.field();
    }
    return std::string("<none>");
  };
  const PanelConfig base = PanelConfig::defaults(ModelVariant::IndependentErrors, 10, 2, vec({1.0}), 0);
  CHECK(field_of(base) == "<none>");

  PanelConfig c = base;
  c.error_cov(0, 1) = c.error_cov(1, 0) = 2.0;
  CHECK(field_of(c) == "error_cov");

  c = base;
  c.error_cov(0, 1) = 0.3;
  CHECK(field_of(c) == "error_cov");

  c = base;
  c.n_periods = 1;
  CHECK(field_of(c) == "n_periods");

  c = PanelConfig::defaults(ModelVariant::VarianceFE, 10, 2, vec({1.0}), 0);
  CHECK(field_of(c) == "n_periods");

  c = base;
  c.beta = vec({1.0, 2.0});
  CHECK(field_of(c) == "beta");

  c = base;
  c.factor_loadings = vec({1.0, 2.0});
  CHECK(field_of(c) == "factor_loadings");

  c = PanelConfig::defaults(ModelVariant::FactorLoading, 10, 2, vec({1.0}), 0);
  c.factor_loadings = vec({2.0, 1.0});
  CHECK(field_of(c) == "factor_loadings");
  c.factor_loadings.reset();
  CHECK(field_of(c) == "factor_loadings");

  c = PanelConfig::defaults(ModelVariant::SlopeFE, 10, 2, vec({1.0}), 0);
  c.z_dist = Distribution::normal(1.0, 1.0);
  CHECK(field_of(c) == "z_dist");

  c = PanelConfig::defaults(ModelVariant::VarianceFE, 10, 3, vec({1.0}), 0);
  c.variance_fe_dist = Distribution::uniform(-1.0, 1.0);
  CHECK(field_of(c) == "variance_fe_dist");

  c = PanelConfig::defaults(ModelVariant::AdditiveVariance, 10, 3, vec({1.0}), 0);
  c.error_cov(0, 2) = c.error_cov(2, 0) = 0.1;
  CHECK(field_of(c) == "error_cov");

  c = base;
  c.n_individuals = 0;
  CHECK(field_of(c) == "n_individuals");

  CHECK_THROWS_AS(simulate(c), ConfigError);
}

TEST_CASE("configuration JSON round trip") {
  PanelConfig c = PanelConfig::defaults(ModelVariant::FactorLoading, 123, 3, vec({1.0, -0.5}), 99);
  c.x_dist = {Distribution::normal(0.5, 2.0), Distribution::uniform(-1.0, 1.0)};
  c.fe = {0.5, 2.0};
  const PanelConfig back = panel_config_from_json(to_json(c));
  CHECK(back.variant == c.variant);
  CHECK(back.n_individuals == 123);
  CHECK(back.seed == 99);
  CHECK(back.beta == c.beta);
  CHECK(*back.factor_loadings == *c.factor_loadings);
  CHECK(back.fe.noise_sd == 2.0);
  CHECK(back.x_dist[1].family == Distribution::Family::Uniform);
  CHECK(simulate(back).y == simulate(c).y);

  json bad = to_json(c);
  bad["variant"] = "Nope";
  CHECK_THROWS_AS(panel_config_from_json(bad), ConfigError);
  bad = to_json(c);
  bad["x_dist"] = json{{"family", "weibull"}};
  CHECK_THROWS_AS(panel_config_from_json(bad), ConfigError);
  bad = to_json(c);
  bad.erase("beta");
  CHECK_THROWS_AS(panel_config_from_json(bad), ConfigError);
}

TEST_CASE("number formatting round trips") {
  for (double v : {0.0, 1.0, -2.5, 0.1, 1e-300, 123456789.123456789, 3.141592653589793}) {
    CHECK(parse_number(format_number(v), "v") == v);
  }
  CHECK(format_number(std::nan("")).empty());
  CHECK(std::isnan(parse_number("", "v")));
  CHECK_THROWS(parse_number("1.2.3", "v"));
}

TEST_CASE("datasets serialize without truth and reload exactly") {
  PanelConfig c = PanelConfig::defaults(ModelVariant::SlopeFE, 40, 2, vec({1.0, -0.5}), 12);
  const PanelDataset ds = simulate(c);
  const fs::path dir = scratch_dir("roundtrip");
  save_dataset(ds, dir.string());
  CHECK(fs::exists(dir / "meta.json"));
  CHECK(fs::exists(dir / "y.csv"));
  CHECK(fs::exists(dir / "x.csv"));
  CHECK(fs::exists(dir / "z.csv"));
  CHECK(fs::exists(dir / "truth" / "alpha.csv"));

  const PanelDataset back = load_dataset(dir.string());
  CHECK(back.y == ds.y);
  CHECK(back.x == ds.x);
  CHECK(*back.z == *ds.z);
  CHECK_FALSE(back.has_truth());
  CHECK(back.config.variant == ModelVariant::SlopeFE);

  // x.csv holds N*T rows, i-major.
  const std::string x_text = slurp(dir / "x.csv");
  CHECK(std::count(x_text.begin(), x_text.end(), '\n') == 80);

  const fs::path dir2 = scratch_dir("roundtrip2");
  save_dataset(simulate(c), dir2.string());
  for (const char* f : {"meta.json", "y.csv", "x.csv", "z.csv", "truth/latent_y.csv"}) {
    CHECK(slurp(dir / f) == slurp(dir2 / f));
  }
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("truncated datasets round trip with missing cells") {
  PanelConfig c = PanelConfig::defaults(ModelVariant::IndependentErrors, 30, 2, vec({1.0}), 6);
  c.sampling = Sampling::Truncated;
  const PanelDataset ds = simulate(c);
  const fs::path dir = scratch_dir("truncated");
  save_dataset(ds, dir.string(), false);
  CHECK_FALSE(fs::exists(dir / "truth"));
  const PanelDataset back = load_dataset(dir.string());
  CHECK(back.retained_cells() == ds.retained_cells());
  CHECK(back.config.sampling == Sampling::Truncated);
  for (Index i = 0; i < 30; ++i) {
    for (Index t = 0; t < 2; ++t) {
      CHECK(back.observed(i, t) == ds.observed(i, t));
      if (ds.observed(i, t)) CHECK(back.y(i, t) == ds.y(i, t));
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("loading a broken directory fails") {
  const fs::path dir = scratch_dir("broken");
  CHECK_THROWS_AS(load_dataset(dir.string()), Error);
  const PanelDataset ds = simulate(PanelConfig::defaults(ModelVariant::IndependentErrors, 5, 2, vec({1.0}), 1));
  save_dataset(ds, dir.string());
  write_text_file((dir / "y.csv").string(), "1,2\n");
  CHECK_THROWS_AS(load_dataset(dir.string()), Error);
  fs::remove_all(dir);
}
