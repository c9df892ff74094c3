#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "tobitiv/errors.hpp"
#include "tobitiv/experiment.hpp"
#include "tobitiv/io.hpp"

namespace fs = std::filesystem;
using namespace tobitiv;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitEstimation = 3;
constexpr int kExitVerification = 4;

struct Options {
  std::string config;
  std::string out;
  std::string data;
  std::optional<std::uint64_t> seed;
  int workers = 1;
  std::string format = "csv";
};

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Configuration:
    case ErrorKind::Io:
    case ErrorKind::UnsupportedMode:
      return kExitConfig;
    default:
      return kExitEstimation;
  }
}

int report_error(const std::string& kind, const std::string& message, int code, const std::string& field = {},
                 const json& extra = nullptr) {
  json e = {{"kind", kind}, {"message", message}, {"exit_code", code}};
  if (!field.empty()) e["field"] = field;
  if (!extra.is_null()) e["detail"] = extra;
  std::cerr << json{{"error", e}}.dump() << '\n';
  return code;
}

json load_config(const Options& o, bool required) {
  if (o.config.empty()) {
    if (required) throw ConfigError("--config", "a config file is required");
    return json::object();
  }
  return read_json_file(o.config);
}

std::string out_dir(const Options& o, const std::string& fallback) { return o.out.empty() ? fallback : o.out; }

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create directory " + dir + ": " + ec.message());
}

std::string path_in(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

int cmd_simulate(const Options& o) {
  ExperimentConfig config = experiment_config_from_json(load_config(o, true));
  if (o.seed) config.panel.seed = *o.seed;
  const PanelDataset ds = simulate(config.panel);
  const std::string dir = out_dir(o, config.output_dir);
  save_dataset(ds, dir);

  json info = {{"output_dir", dir},
               {"variant", std::string(to_string(ds.config.variant))},
               {"sampling", std::string(to_string(ds.config.sampling))},
               {"n_individuals", ds.n_individuals()},
               {"n_periods", ds.n_periods()},
               {"n_regressors", ds.n_regressors()},
               {"retained_cells", ds.retained_cells()}};
  if (ds.config.sampling == Sampling::Censored) info["censoring_rate"] = censoring_rate(ds);
  if (o.format == "json") {
    std::cout << info.dump(2) << '\n';
  } else {
    std::cout << "wrote " << dir << ": N = " << ds.n_individuals() << ", T = " << ds.n_periods()
              << ", K = " << ds.n_regressors() << ", retained cells = " << ds.retained_cells() << '\n';
    if (info.contains("censoring_rate")) {
      std::cout << "censoring rate = " << format_number(info["censoring_rate"].get<double>()) << '\n';
    }
  }
  return kExitOk;
}

EstimatorConfig estimator_from_file(const json& j) {
  if (j.contains("estimator")) return estimator_config_from_json(j.at("estimator"));
  for (const char* key : {"panel", "variant", "replications", "sample_sizes", "master_seed", "output_dir"}) {
    if (j.contains(key)) return EstimatorConfig{};
  }
  return estimator_config_from_json(j);
}

int cmd_estimate(const Options& o) {
  if (o.data.empty()) throw ConfigError("--data", "a dataset directory is required");
  const EstimatorConfig config = estimator_from_file(load_config(o, false));
  const PanelDataset ds = load_dataset(o.data);
  config.validate(ds.config);

  const EstimateResult fit = estimate(ds, config);
  const std::string dir = out_dir(o, "estimate_out");
  ensure_dir(dir);

  json result = to_json(fit);
  result["estimator_config"] = to_json(config, ds.config.variant);
  write_text_file(path_in(dir, "result.json"), result.dump(2) + "\n");

  const Eigen::VectorXd se = fit.std_errors();
  if (o.format == "csv") {
    std::string text = "parameter,estimate,std_error\n";
    for (std::size_t p = 0; p < fit.param_names.size(); ++p) {
      const auto i = static_cast<Index>(p);
      text += fit.param_names[p] + ',' + format_number(fit.estimates[i]) + ',' + format_number(se[i]) + '\n';
    }
    write_text_file(path_in(dir, "estimates.csv"), text);
  }

  std::printf("%-28s %14s %14s\n", "parameter", "estimate", "std_error");
  for (std::size_t p = 0; p < fit.param_names.size(); ++p) {
    const auto i = static_cast<Index>(p);
    std::printf("%-28s %14.6g %14.6g\n", fit.param_names[p].c_str(), fit.estimates[i], se[i]);
  }
  std::printf("rows = %lld, clusters = %lld, instrument rank = %lld", static_cast<long long>(fit.n_rows),
              static_cast<long long>(fit.n_clusters), static_cast<long long>(fit.instrument_rank));
  if (fit.j_statistic) std::printf(", J = %.6g (dof %lld)", *fit.j_statistic, static_cast<long long>(fit.j_dof));
  std::printf("\n");
  return kExitOk;
}

int cmd_montecarlo(const Options& o) {
  ExperimentConfig config = experiment_config_from_json(load_config(o, true));
  if (o.seed) config.master_seed = *o.seed;
  const MonteCarloResult r = run_monte_carlo(config, o.workers);
  const std::string dir = out_dir(o, config.output_dir);
  ensure_dir(dir);

  if (o.format == "json") {
    write_text_file(path_in(dir, "montecarlo.json"), to_json(r).dump(2) + "\n");
  } else {
    write_text_file(path_in(dir, "replications.csv"), replications_csv(r));
    write_text_file(path_in(dir, "summary.csv"), summary_csv(r.summary));
  }
  write_text_file(path_in(dir, "timings.csv"), timings_csv(r));

  std::printf("%8s %-28s %12s %12s %12s %12s %8s %6s\n", "N", "parameter", "true", "bias", "rmse", "median_se",
              "cover95", "fail");
  for (const auto& s : r.summary) {
    std::printf("%8lld %-28s %12.5g %12.4g %12.4g %12.4g %8.3f %6d\n", static_cast<long long>(s.n_individuals),
                s.parameter.c_str(), s.true_value, s.mean_bias, s.rmse, s.median_se, s.coverage_95, s.n_failed);
  }
  if (r.abort_reason) {
    return report_error(std::string(to_string(ErrorKind::TooManyFailures)), "run aborted: " + *r.abort_reason,
                        kExitEstimation);
  }
  return kExitOk;
}

int cmd_verify(const Options& o) {
  VerifyConfig config = verify_config_from_json(load_config(o, false));
  if (o.seed) config.seed = *o.seed;
  const VerifyReport r = run_verify(config, o.workers);
  const std::string dir = out_dir(o, "verify_out");
  ensure_dir(dir);

  const json report = to_json(r);
  if (o.format == "json") {
    write_text_file(path_in(dir, "verify.json"), report.dump(2) + "\n");
  } else {
    write_text_file(path_in(dir, "verify_points.csv"), verify_points_csv(r));
    write_text_file(path_in(dir, "verify_summary.csv"), verify_summary_csv(r));
  }
  std::cout << verify_summary_csv(r);
  std::cout << "max |residual| = " << format_number(r.max_abs_residual) << ", tolerance = " << format_number(config.tol)
            << '\n';
  if (!r.all_pass) {
    return report_error("verification_failure",
                        std::to_string(report["failures"].size()) + " residual(s) exceed the tolerance " +
                            format_number(config.tol),
                        kExitVerification, {}, report["failures"]);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Moment-based estimation of censored panel models with fixed effects"};
  app.require_subcommand(1);

  Options o;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config, "JSON config file");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--seed", seed, "overrides the seed in the config");
    cmd->add_option("--workers", o.workers, "worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("--format", o.format, "output format")->check(CLI::IsMember({"csv", "json"}));
  };

  auto* simulate_cmd = app.add_subcommand("simulate", "simulate a panel and write it to a dataset directory");
  auto* estimate_cmd = app.add_subcommand("estimate", "estimate from a dataset directory");
  auto* montecarlo_cmd = app.add_subcommand("montecarlo", "run a Monte Carlo study");
  auto* verify_cmd = app.add_subcommand("verify", "check the truncated-moment identity on a parameter grid");
  for (auto* cmd : {simulate_cmd, estimate_cmd, montecarlo_cmd, verify_cmd}) add_common(cmd);
  estimate_cmd->add_option("--data", o.data, "dataset directory written by simulate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what(), kExitConfig);
  }

  for (auto* cmd : {simulate_cmd, estimate_cmd, montecarlo_cmd, verify_cmd}) {
    if (cmd->count("--seed") > 0) o.seed = seed;
  }

  try {
    if (simulate_cmd->parsed()) return cmd_simulate(o);
    if (estimate_cmd->parsed()) return cmd_estimate(o);
    if (montecarlo_cmd->parsed()) return cmd_montecarlo(o);
    return cmd_verify(o);
  } catch (const ConfigError& e) {
    return report_error(std::string(to_string(e.kind())), e.what(), kExitConfig, e.field());
  } catch (const Error& e) {
    return report_error(std::string(to_string(e.kind())), e.what(), exit_code_for(e.kind()));
  } catch (const json::exception& e) {
    return report_error("configuration", e.what(), kExitConfig);
  } catch (const std::exception& e) {
    return report_error("internal", e.what(), 1);
  }
}
