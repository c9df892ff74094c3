#include "tobitiv/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <mutex>
#include <random>
#include <set>
#include <thread>

#include "tobitiv/errors.hpp"
#include "tobitiv/io.hpp"
#include "tobitiv/rng.hpp"

namespace tobitiv {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kZ975 = 1.959963984540054;

struct MethodName {
  EstimatorMethod method;
  std::string_view name;
};

constexpr MethodName kMethodNames[] = {
    {EstimatorMethod::CrossSection, "cross_section"},
    {EstimatorMethod::Pairwise, "pairwise"},
    {EstimatorMethod::PairwiseKM, "pairwise_km"},
    {EstimatorMethod::FactorLoading, "factor_loading"},
    {EstimatorMethod::Triple, "triple"},
    {EstimatorMethod::TripleAdditive, "triple_additive"},
    {EstimatorMethod::SlopeFE, "slope_fe"},
};

bool is_triple(EstimatorMethod m) {
  return m == EstimatorMethod::Triple || m == EstimatorMethod::TripleAdditive;
}

std::vector<std::pair<Index, Index>> resolved_pairs(const EstimatorConfig& c, EstimatorMethod m, Index periods) {
  if (!c.pairs.empty()) return c.pairs;
  if (m == EstimatorMethod::FactorLoading) return {{1, 0}};
  std::vector<std::pair<Index, Index>> out;
  for (Index t = 0; t < periods; ++t) {
    for (Index s = t + 1; s < periods; ++s) out.emplace_back(t, s);
  }
  return out;
}

std::vector<std::array<Index, 3>> resolved_triples(const EstimatorConfig& c, Index periods) {
  if (!c.triples.empty()) return c.triples;
  std::vector<std::array<Index, 3>> out;
  for (Index t = 0; t < periods; ++t) {
    for (Index s = t + 1; s < periods; ++s) {
      for (Index u = s + 1; u < periods; ++u) out.push_back({t, s, u});
    }
  }
  return out;
}

// JSON field helpers; every failure names the field.

void reject_unknown_keys(const json& j, const std::string& field, std::initializer_list<std::string_view> known) {
  for (const auto& item : j.items()) {
    if (std::find(known.begin(), known.end(), item.key()) == known.end()) {
      throw ConfigError(field + "." + item.key(), "unknown field");
    }
  }
}

double get_number(const json& j, const std::string& field) {
  if (!j.is_number()) throw ConfigError(field, "must be a number");
  return j.get<double>();
}

long long get_integer(const json& j, const std::string& field) {
  if (!j.is_number_integer()) throw ConfigError(field, "must be an integer");
  return j.get<long long>();
}

std::uint64_t get_u64(const json& j, const std::string& field) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<long long>() >= 0) return j.get<std::uint64_t>();
  throw ConfigError(field, "must be an unsigned 64-bit integer");
}

std::string get_string(const json& j, const std::string& field) {
  if (!j.is_string()) throw ConfigError(field, "must be a string");
  return j.get<std::string>();
}

std::vector<long long> get_integer_tuple(const json& j, const std::string& field, std::size_t n) {
  if (!j.is_array() || j.size() != n) {
    throw ConfigError(field, "must be an array of " + std::to_string(n) + " integers");
  }
  std::vector<long long> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(get_integer(j[i], field));
  return out;
}

std::vector<std::pair<int, int>> km_from_json(const json& j, const std::string& field) {
  if (!j.is_array() || j.empty()) throw ConfigError(field, "must be a non-empty array of [k, m] pairs");
  std::vector<std::pair<int, int>> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto v = get_integer_tuple(j[i], field + "[" + std::to_string(i) + "]", 2);
    out.emplace_back(static_cast<int>(v[0]), static_cast<int>(v[1]));
  }
  return out;
}

json km_to_json(const std::vector<std::pair<int, int>>& km) {
  json a = json::array();
  for (const auto& [k, m] : km) a.push_back({k, m});
  return a;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string optional_number(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json number_or_null(const std::optional<double>& v) { return v ? number_or_null(*v) : json(nullptr); }

// Runs task(i) for i in [0, n) on up to `workers` threads. The first
// exception escaping a task is rethrown after all threads have joined.
template <class Task>
void parallel_for(std::size_t n, int workers, Task task) {
  const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(workers, 1)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        task(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(run);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

std::string_view to_string(EstimatorMethod m) {
  for (const auto& n : kMethodNames) {
    if (n.method == m) return n.name;
  }
  return "unknown";
}

EstimatorMethod parse_estimator_method(std::string_view name) {
  for (const auto& n : kMethodNames) {
    if (n.name == name) return n.method;
  }
  throw ConfigError("estimator.method", "unknown estimator method '" + std::string(name) + "'");
}

EstimatorMethod default_method(ModelVariant v) {
  switch (v) {
    case ModelVariant::CrossSection: return EstimatorMethod::CrossSection;
    case ModelVariant::IndependentErrors: return EstimatorMethod::Pairwise;
    case ModelVariant::NonStationary: return EstimatorMethod::PairwiseKM;
    case ModelVariant::FactorLoading: return EstimatorMethod::FactorLoading;
    case ModelVariant::VarianceFE: return EstimatorMethod::Triple;
    case ModelVariant::AdditiveVariance: return EstimatorMethod::TripleAdditive;
    case ModelVariant::SlopeFE: return EstimatorMethod::SlopeFE;
  }
  return EstimatorMethod::Pairwise;
}

void EstimatorConfig::validate(const PanelConfig& panel) const {
  const EstimatorMethod m = resolved_method(panel.variant);
  const Index periods = panel.n_periods;
  const std::string name(to_string(m));

  if (m != EstimatorMethod::CrossSection && periods < 2) {
    throw ConfigError("estimator.method", name + " requires T >= 2");
  }
  if (is_triple(m) && periods < 3) {
    throw ConfigError("estimator.method", name + " uses period triples and requires T >= 3, got T = " +
                                              std::to_string(periods));
  }
  if (m == EstimatorMethod::SlopeFE && panel.variant != ModelVariant::SlopeFE) {
    throw ConfigError("estimator.method", "slope_fe needs the z variable of the SlopeFE variant");
  }
  if (m == EstimatorMethod::FactorLoading && pairs.size() > 1) {
    throw ConfigError("estimator.pairs", "factor_loading takes exactly one pair");
  }
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto [t, s] = pairs[i];
    if (t < 0 || s < 0 || t >= periods || s >= periods || t == s) {
      throw ConfigError("estimator.pairs[" + std::to_string(i) + "]",
                        "periods must be distinct and in [0, " + std::to_string(periods) + ")");
    }
  }
  for (std::size_t i = 0; i < triples.size(); ++i) {
    const auto& tr = triples[i];
    const bool in_range = std::all_of(tr.begin(), tr.end(), [&](Index p) { return p >= 0 && p < periods; });
    if (!in_range || tr[0] == tr[1] || tr[1] == tr[2] || tr[0] == tr[2]) {
      throw ConfigError("estimator.triples[" + std::to_string(i) + "]",
                        "periods must be distinct and in [0, " + std::to_string(periods) + ")");
    }
  }
  if (km.empty()) throw ConfigError("estimator.km", "must not be empty");
  for (std::size_t i = 0; i < km.size(); ++i) {
    const auto [k, mm] = km[i];
    if (k < 1 || mm < 1 || k + mm + 1 > kMaxMomentOrder) {
      throw ConfigError("estimator.km[" + std::to_string(i) + "]",
                        "need k, m >= 1 and k + m + 1 <= " + std::to_string(kMaxMomentOrder));
    }
  }
  if (m == EstimatorMethod::TripleAdditive && (reference_period < 0 || reference_period >= periods)) {
    throw ConfigError("estimator.reference_period", "must be in [0, " + std::to_string(periods) + ")");
  }
  if (m == EstimatorMethod::FactorLoading) {
    if (!(nonlinear.r_lo > 0.0) || !(nonlinear.r_hi > nonlinear.r_lo)) {
      throw ConfigError("estimator.nonlinear", "need 0 < r_lo < r_hi");
    }
    if (nonlinear.grid_points < 3) throw ConfigError("estimator.nonlinear.grid_points", "must be at least 3");
    if (!(nonlinear.x_tol > 0.0)) throw ConfigError("estimator.nonlinear.x_tol", "must be positive");
    if (nonlinear.max_iterations < 1) throw ConfigError("estimator.nonlinear.max_iterations", "must be positive");
  }
}

EstimatorConfig estimator_config_from_json(const json& j) {
  const json& e = j.contains("estimator") ? j.at("estimator") : j;
  if (!e.is_object()) throw ConfigError("estimator", "must be an object");
  reject_unknown_keys(e, "estimator",
                      {"method", "pairs", "triples", "km", "instruments", "weighting", "reference_period", "nonlinear"});

  EstimatorConfig c;
  if (e.contains("method")) c.method = parse_estimator_method(get_string(e.at("method"), "estimator.method"));
  if (e.contains("pairs")) {
    const json& a = e.at("pairs");
    if (!a.is_array()) throw ConfigError("estimator.pairs", "must be an array of [t, s] pairs");
    for (std::size_t i = 0; i < a.size(); ++i) {
      const auto v = get_integer_tuple(a[i], "estimator.pairs[" + std::to_string(i) + "]", 2);
      c.pairs.emplace_back(v[0], v[1]);
    }
  }
  if (e.contains("triples")) {
    const json& a = e.at("triples");
    if (!a.is_array()) throw ConfigError("estimator.triples", "must be an array of [t, s, tau] triples");
    for (std::size_t i = 0; i < a.size(); ++i) {
      const auto v = get_integer_tuple(a[i], "estimator.triples[" + std::to_string(i) + "]", 3);
      c.triples.push_back({v[0], v[1], v[2]});
    }
  }
  if (e.contains("km")) c.km = km_from_json(e.at("km"), "estimator.km");
  if (e.contains("instruments")) {
    c.instruments = parse_instrument_set(get_string(e.at("instruments"), "estimator.instruments"));
  }
  if (e.contains("weighting")) c.weighting = parse_weighting(get_string(e.at("weighting"), "estimator.weighting"));
  if (e.contains("reference_period")) {
    c.reference_period = get_integer(e.at("reference_period"), "estimator.reference_period");
  }
  if (e.contains("nonlinear")) {
    const json& n = e.at("nonlinear");
    if (!n.is_object()) throw ConfigError("estimator.nonlinear", "must be an object");
    reject_unknown_keys(n, "estimator.nonlinear",
                        {"r_lo", "r_hi", "grid_points", "x_tol", "max_iterations", "gradient_tol"});
    auto& o = c.nonlinear;
    if (n.contains("r_lo")) o.r_lo = get_number(n.at("r_lo"), "estimator.nonlinear.r_lo");
    if (n.contains("r_hi")) o.r_hi = get_number(n.at("r_hi"), "estimator.nonlinear.r_hi");
    if (n.contains("grid_points")) {
      o.grid_points = static_cast<int>(get_integer(n.at("grid_points"), "estimator.nonlinear.grid_points"));
    }
    if (n.contains("x_tol")) o.x_tol = get_number(n.at("x_tol"), "estimator.nonlinear.x_tol");
    if (n.contains("max_iterations")) {
      o.max_iterations = static_cast<int>(get_integer(n.at("max_iterations"), "estimator.nonlinear.max_iterations"));
    }
    if (n.contains("gradient_tol")) o.gradient_tol = get_number(n.at("gradient_tol"), "estimator.nonlinear.gradient_tol");
  }
  return c;
}

json to_json(const EstimatorConfig& c, ModelVariant v) {
  const EstimatorMethod m = c.resolved_method(v);
  json j;
  j["method"] = std::string(to_string(m));
  json pairs = json::array();
  for (const auto& [t, s] : c.pairs) pairs.push_back({t, s});
  j["pairs"] = pairs;
  json triples = json::array();
  for (const auto& tr : c.triples) triples.push_back({tr[0], tr[1], tr[2]});
  j["triples"] = triples;
  j["km"] = km_to_json(c.km);
  j["instruments"] = std::string(to_string(c.instruments));
  j["weighting"] = std::string(to_string(c.weighting));
  j["reference_period"] = c.reference_period;
  j["nonlinear"] = {{"r_lo", c.nonlinear.r_lo},
                    {"r_hi", c.nonlinear.r_hi},
                    {"grid_points", c.nonlinear.grid_points},
                    {"x_tol", c.nonlinear.x_tol},
                    {"max_iterations", c.nonlinear.max_iterations},
                    {"gradient_tol", c.nonlinear.gradient_tol}};
  return j;
}

EstimateResult estimate(const PanelDataset& ds, const EstimatorConfig& config) {
  const EstimatorMethod m = config.resolved_method(ds.config.variant);
  const Index periods = ds.n_periods();
  const InstrumentSet set = config.instruments;

  if (m == EstimatorMethod::FactorLoading) {
    const auto [t, s] = resolved_pairs(config, m, periods).front();
    EstimateResult r = nonlinear_gmm(build_factor_loading(ds, t, s, set), config.nonlinear);
    r.estimator = std::string(to_string(m));
    return r;
  }

  std::vector<MomentSystem> systems;
  switch (m) {
    case EstimatorMethod::CrossSection: {
      std::set<int> ks;
      for (const auto& [k, unused] : config.km) ks.insert(k);
      for (int k : ks) systems.push_back(build_cross_section(ds, k, set));
      break;
    }
    case EstimatorMethod::Pairwise:
      for (const auto& [t, s] : resolved_pairs(config, m, periods)) {
        systems.push_back(build_pairwise_independent(ds, t, s, set));
      }
      break;
    case EstimatorMethod::PairwiseKM:
      for (const auto& [t, s] : resolved_pairs(config, m, periods)) {
        for (const auto& [k, mm] : config.km) systems.push_back(build_pairwise_nonstationary(ds, t, s, k, mm, set));
      }
      break;
    case EstimatorMethod::Triple:
      for (const auto& tr : resolved_triples(config, periods)) {
        systems.push_back(build_triple_variance_fe(ds, tr[0], tr[1], tr[2], set));
      }
      break;
    case EstimatorMethod::TripleAdditive:
      for (const auto& tr : resolved_triples(config, periods)) {
        systems.push_back(build_triple_additive_variance(ds, tr[0], tr[1], tr[2], set));
      }
      break;
    case EstimatorMethod::SlopeFE:
      for (const auto& [t, s] : resolved_pairs(config, m, periods)) {
        systems.push_back(build_pairwise_slope_fe(ds, t, s, set));
      }
      break;
    case EstimatorMethod::FactorLoading: break;
  }

  MomentSystem system = systems.size() == 1 ? std::move(systems.front()) : stack(systems);
  if (m == EstimatorMethod::TripleAdditive) system = normalize_additive_variance(system, config.reference_period);

  EstimateResult r = two_stage_least_squares(system, {config.weighting, 1e-10});
  r.estimator = std::string(to_string(m));
  return r;
}

void ExperimentConfig::validate() const {
  panel.validate();
  if (replications < 1) throw ConfigError("replications", "must be at least 1");
  if (sample_sizes.empty()) throw ConfigError("sample_sizes", "must not be empty");
  for (std::size_t i = 0; i < sample_sizes.size(); ++i) {
    if (sample_sizes[i] < 1) throw ConfigError("sample_sizes", "entries must be positive");
    if (i > 0 && sample_sizes[i] <= sample_sizes[i - 1]) {
      throw ConfigError("sample_sizes", "must be strictly increasing");
    }
  }
  estimator.validate(panel);
}

ExperimentConfig experiment_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config", "must be a JSON object");
  reject_unknown_keys(j, "config",
                      {"variant", "panel", "estimator", "replications", "sample_sizes", "master_seed", "output_dir"});

  json panel = j.contains("panel") ? j.at("panel") : json::object();
  if (!panel.is_object()) throw ConfigError("panel", "must be an object");
  if (j.contains("variant")) {
    const std::string v = get_string(j.at("variant"), "variant");
    if (panel.contains("variant") && panel.at("variant") != j.at("variant")) {
      throw ConfigError("variant", "disagrees with panel.variant");
    }
    panel["variant"] = v;
  }

  ExperimentConfig c;
  c.panel = panel_config_from_json(panel);
  if (j.contains("estimator")) c.estimator = estimator_config_from_json(j.at("estimator"));
  if (j.contains("replications")) c.replications = static_cast<int>(get_integer(j.at("replications"), "replications"));
  if (j.contains("sample_sizes")) {
    const json& a = j.at("sample_sizes");
    if (!a.is_array()) throw ConfigError("sample_sizes", "must be an array of positive integers");
    for (const auto& v : a) c.sample_sizes.push_back(get_integer(v, "sample_sizes"));
  } else {
    c.sample_sizes = {c.panel.n_individuals};
  }
  if (j.contains("master_seed")) {
    c.master_seed = get_u64(j.at("master_seed"), "master_seed");
  } else {
    c.master_seed = c.panel.seed;
  }
  if (j.contains("output_dir")) c.output_dir = get_string(j.at("output_dir"), "output_dir");
  c.validate();
  return c;
}

std::uint64_t replication_seed(std::uint64_t master_seed, std::uint64_t replication, std::uint64_t size_index) {
  return substream(substream(master_seed, replication), size_index);
}

MonteCarloResult run_monte_carlo(const ExperimentConfig& config, int workers) {
  config.validate();
  MonteCarloResult result;
  const auto reps = static_cast<std::size_t>(config.replications);

  for (std::size_t si = 0; si < config.sample_sizes.size(); ++si) {
    const Index n = config.sample_sizes[si];
    std::vector<ReplicationRecord> batch(reps);
    std::vector<std::vector<std::string>> names(reps);

    parallel_for(reps, workers, [&](std::size_t j) {
      ReplicationRecord& rec = batch[j];
      rec.replication = static_cast<int>(j);
      rec.n_individuals = n;
      const auto start = std::chrono::steady_clock::now();
      try {
        PanelConfig panel = config.panel;
        panel.n_individuals = n;
        panel.seed = replication_seed(config.master_seed, j, si);
        const EstimateResult fit = estimate(simulate(panel), config.estimator);
        rec.ok = true;
        rec.estimates = fit.estimates;
        rec.std_errors = fit.std_errors();
        rec.converged = fit.converged;
        rec.j_statistic = fit.j_statistic;
        if (fit.j_statistic && fit.j_dof > 0) rec.j_p_value = j_test(fit).p_value;
        names[j] = fit.param_names;
      } catch (const Error& e) {
        rec.error_kind = std::string(to_string(e.kind()));
        rec.error_message = e.what();
      } catch (const std::exception& e) {
        rec.error_kind = "internal";
        rec.error_message = e.what();
      }
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    });

    int failed = 0;
    for (std::size_t j = 0; j < reps; ++j) {
      ReplicationRecord& rec = batch[j];
      if (rec.ok && result.param_names.empty()) result.param_names = names[j];
      if (rec.ok && names[j] != result.param_names) {
        rec.ok = false;
        rec.error_kind = "internal";
        rec.error_message = "parameter labels differ between replications";
      }
      if (!rec.ok) ++failed;
      result.records.push_back(std::move(rec));
    }
    if (5 * failed > config.replications) {
      result.abort_reason = std::to_string(failed) + " of " + std::to_string(config.replications) +
                            " replications failed at N = " + std::to_string(n);
      break;
    }
  }
  result.summary = summarize(result.param_names, result.records, config.panel);
  return result;
}

std::vector<ParameterSummary> summarize(const std::vector<std::string>& param_names,
                                        const std::vector<ReplicationRecord>& records, const PanelConfig& panel) {
  std::vector<Index> sizes;
  for (const auto& r : records) {
    if (std::find(sizes.begin(), sizes.end(), r.n_individuals) == sizes.end()) sizes.push_back(r.n_individuals);
  }

  std::vector<ParameterSummary> out;
  for (Index n : sizes) {
    std::vector<const ReplicationRecord*> ok;
    int failed = 0;
    for (const auto& r : records) {
      if (r.n_individuals != n) continue;
      if (r.ok) {
        ok.push_back(&r);
      } else {
        ++failed;
      }
    }
    int j_reported = 0;
    int j_rejected = 0;
    for (const auto* r : ok) {
      if (r->j_p_value) {
        ++j_reported;
        if (*r->j_p_value < 0.05) ++j_rejected;
      }
    }

    for (std::size_t p = 0; p < param_names.size(); ++p) {
      const auto idx = static_cast<Index>(p);
      ParameterSummary s;
      s.n_individuals = n;
      s.parameter = param_names[p];
      try {
        s.true_value = true_parameter(panel, param_names[p]);
      } catch (const Error&) {
        s.true_value = kNaN;
      }
      s.n_ok = static_cast<int>(ok.size());
      s.n_failed = failed;
      s.j_reject_5pct = j_reported > 0 ? double(j_rejected) / j_reported : kNaN;

      if (ok.empty()) {
        s.mean_estimate = s.mean_bias = s.mc_se_of_mean = s.rmse = s.median_se = s.coverage_95 = kNaN;
        out.push_back(s);
        continue;
      }
      const double count = static_cast<double>(ok.size());
      double sum = 0.0;
      double sq_err = 0.0;
      int covered = 0;
      std::vector<double> ses;
      for (const auto* r : ok) {
        const double est = r->estimates[idx];
        const double se = r->std_errors[idx];
        sum += est;
        sq_err += (est - s.true_value) * (est - s.true_value);
        if (std::abs(est - s.true_value) <= kZ975 * se) ++covered;
        ses.push_back(se);
      }
      s.mean_estimate = sum / count;
      s.mean_bias = s.mean_estimate - s.true_value;
      if (ok.size() > 1) {
        double ss = 0.0;
        for (const auto* r : ok) ss += (r->estimates[idx] - s.mean_estimate) * (r->estimates[idx] - s.mean_estimate);
        s.mc_se_of_mean = std::sqrt(ss / (count - 1.0)) / std::sqrt(count);
      } else {
        s.mc_se_of_mean = kNaN;
      }
      s.rmse = std::sqrt(sq_err / count);
      std::sort(ses.begin(), ses.end());
      const std::size_t h = ses.size() / 2;
      s.median_se = ses.size() % 2 ? ses[h] : 0.5 * (ses[h - 1] + ses[h]);
      s.coverage_95 = covered / count;
      out.push_back(s);
    }
  }
  return out;
}

std::string replications_csv(const MonteCarloResult& r) {
  std::string text = "n_individuals,replication,ok,error_kind,error_message,converged,j_statistic,j_p_value";
  for (const auto& n : r.param_names) text += ",est:" + n;
  for (const auto& n : r.param_names) text += ",se:" + n;
  text += '\n';
  for (const auto& rec : r.records) {
    text += std::to_string(rec.n_individuals) + ',' + std::to_string(rec.replication) + ',' + (rec.ok ? "1" : "0") +
            ',' + csv_field(rec.error_kind) + ',' + csv_field(rec.error_message) + ',' + (rec.converged ? "1" : "0") +
            ',' + optional_number(rec.j_statistic) + ',' + optional_number(rec.j_p_value);
    for (std::size_t p = 0; p < r.param_names.size(); ++p) {
      text += ',' + (rec.ok ? format_number(rec.estimates[static_cast<Index>(p)]) : std::string());
    }
    for (std::size_t p = 0; p < r.param_names.size(); ++p) {
      text += ',' + (rec.ok ? format_number(rec.std_errors[static_cast<Index>(p)]) : std::string());
    }
    text += '\n';
  }
  return text;
}

std::string summary_csv(const std::vector<ParameterSummary>& summary) {
  std::string text =
      "n_individuals,parameter,true_value,n_ok,n_failed,mean_estimate,mean_bias,mc_se_of_mean,rmse,median_se,"
      "coverage_95,j_reject_5pct\n";
  for (const auto& s : summary) {
    text += std::to_string(s.n_individuals) + ',' + csv_field(s.parameter) + ',' + format_number(s.true_value) + ',' +
            std::to_string(s.n_ok) + ',' + std::to_string(s.n_failed) + ',' + format_number(s.mean_estimate) + ',' +
            format_number(s.mean_bias) + ',' + format_number(s.mc_se_of_mean) + ',' + format_number(s.rmse) + ',' +
            format_number(s.median_se) + ',' + format_number(s.coverage_95) + ',' + format_number(s.j_reject_5pct) +
            '\n';
  }
  return text;
}

std::string timings_csv(const MonteCarloResult& r) {
  std::string text = "n_individuals,replication,wall_ms\n";
  for (const auto& rec : r.records) {
    text += std::to_string(rec.n_individuals) + ',' + std::to_string(rec.replication) + ',' +
            format_number(rec.wall_ms) + '\n';
  }
  return text;
}

json to_json(const MonteCarloResult& r) {
  json records = json::array();
  for (const auto& rec : r.records) {
    json e;
    e["n_individuals"] = rec.n_individuals;
    e["replication"] = rec.replication;
    e["ok"] = rec.ok;
    if (rec.ok) {
      e["estimates"] = std::vector<double>(rec.estimates.begin(), rec.estimates.end());
      e["std_errors"] = std::vector<double>(rec.std_errors.begin(), rec.std_errors.end());
      e["converged"] = rec.converged;
      e["j_statistic"] = number_or_null(rec.j_statistic);
      e["j_p_value"] = number_or_null(rec.j_p_value);
    } else {
      e["error"] = {{"kind", rec.error_kind}, {"message", rec.error_message}};
    }
    records.push_back(e);
  }
  json summary = json::array();
  for (const auto& s : r.summary) {
    summary.push_back({{"n_individuals", s.n_individuals},
                       {"parameter", s.parameter},
                       {"true_value", number_or_null(s.true_value)},
                       {"n_ok", s.n_ok},
                       {"n_failed", s.n_failed},
                       {"mean_estimate", number_or_null(s.mean_estimate)},
                       {"mean_bias", number_or_null(s.mean_bias)},
                       {"mc_se_of_mean", number_or_null(s.mc_se_of_mean)},
                       {"rmse", number_or_null(s.rmse)},
                       {"median_se", number_or_null(s.median_se)},
                       {"coverage_95", number_or_null(s.coverage_95)},
                       {"j_reject_5pct", number_or_null(s.j_reject_5pct)}});
  }
  json j;
  j["param_names"] = r.param_names;
  j["records"] = records;
  j["summary"] = summary;
  j["aborted"] = r.abort_reason.has_value();
  j["abort_reason"] = r.abort_reason ? json(*r.abort_reason) : json(nullptr);
  return j;
}

void VerifyConfig::validate() const {
  constexpr double kRhoCap = 0.99;
  if (explicit_points.empty() && points < 1) throw ConfigError("points", "must be at least 1");
  if (!(mu_max >= 0.0)) throw ConfigError("mu_max", "must be non-negative");
  if (!(sigma2_lo > 0.0) || !(sigma2_hi >= sigma2_lo)) throw ConfigError("sigma2_range", "need 0 < lo <= hi");
  if (!(rho_max >= 0.0) || rho_max > kRhoCap) throw ConfigError("rho_max", "must be in [0, 0.99]");
  if (km.empty()) throw ConfigError("km", "must not be empty");
  for (std::size_t i = 0; i < km.size(); ++i) {
    const auto [k, m] = km[i];
    if (k < 1 || m < 1 || k + m + 1 > kMaxMomentOrder) {
      throw ConfigError("km[" + std::to_string(i) + "]",
                        "need k, m >= 1 and k + m + 1 <= " + std::to_string(kMaxMomentOrder));
    }
  }
  if (!(tol > 0.0)) throw ConfigError("tol", "must be positive");
  if (!(quad_tol > 0.0)) throw ConfigError("quad_tol", "must be positive");
  for (std::size_t i = 0; i < explicit_points.size(); ++i) {
    const auto& p = explicit_points[i];
    const std::string field = "points[" + std::to_string(i) + "]";
    if (!std::isfinite(p.mu1) || !std::isfinite(p.mu2)) throw ConfigError(field, "means must be finite");
    if (!(p.sigma1_sq > 0.0) || !(p.sigma2_sq > 0.0)) throw ConfigError(field, "variances must be positive");
    const double rho = p.sigma12 / std::sqrt(p.sigma1_sq * p.sigma2_sq);
    if (!(std::abs(rho) <= kRhoCap)) {
      throw ConfigError(field, "|rho| = " + format_number(std::abs(rho)) + " exceeds the 0.99 cap");
    }
  }
}

std::vector<BivariateNormalSpec> VerifyConfig::grid() const {
  if (!explicit_points.empty()) return explicit_points;
  std::vector<BivariateNormalSpec> out;
  for (int i = 0; i < points; ++i) {
    CounterRng rng(substream(seed, static_cast<std::uint64_t>(i)));
    std::uniform_real_distribution<double> mu(-mu_max, mu_max);
    std::uniform_real_distribution<double> var(sigma2_lo, sigma2_hi);
    std::uniform_real_distribution<double> corr(-rho_max, rho_max);
    BivariateNormalSpec s;
    s.mu1 = mu(rng);
    s.mu2 = mu(rng);
    s.sigma1_sq = var(rng);
    s.sigma2_sq = var(rng);
    s.sigma12 = corr(rng) * std::sqrt(s.sigma1_sq * s.sigma2_sq);
    out.push_back(s);
  }
  return out;
}

VerifyConfig verify_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config", "must be a JSON object");
  reject_unknown_keys(j, "config", {"points", "seed", "mu_max", "sigma2_range", "rho_max", "km", "tol", "quad_tol"});
  VerifyConfig c;
  c.km.clear();
  for (int k = 1; k <= 3; ++k) {
    for (int m = 1; m <= 3; ++m) c.km.emplace_back(k, m);
  }
  if (j.contains("points")) {
    const json& p = j.at("points");
    if (p.is_array()) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        const std::string field = "points[" + std::to_string(i) + "]";
        const json& e = p[i];
        if (!e.is_object()) throw ConfigError(field, "must be an object");
        reject_unknown_keys(e, field, {"mu1", "mu2", "sigma1_sq", "sigma2_sq", "sigma12", "rho"});
        BivariateNormalSpec s;
        auto num = [&](const char* key, double fallback) {
          return e.contains(key) ? get_number(e.at(key), field + "." + key) : fallback;
        };
        s.mu1 = num("mu1", 0.0);
        s.mu2 = num("mu2", 0.0);
        s.sigma1_sq = num("sigma1_sq", 1.0);
        s.sigma2_sq = num("sigma2_sq", 1.0);
        if (e.contains("sigma12") && e.contains("rho")) throw ConfigError(field, "give sigma12 or rho, not both");
        s.sigma12 = e.contains("rho") ? num("rho", 0.0) * std::sqrt(std::abs(s.sigma1_sq * s.sigma2_sq))
                                      : num("sigma12", 0.0);
        c.explicit_points.push_back(s);
      }
    } else {
      c.points = static_cast<int>(get_integer(p, "points"));
    }
  }
  if (j.contains("seed")) c.seed = get_u64(j.at("seed"), "seed");
  if (j.contains("mu_max")) c.mu_max = get_number(j.at("mu_max"), "mu_max");
  if (j.contains("sigma2_range")) {
    const json& r = j.at("sigma2_range");
    if (!r.is_array() || r.size() != 2) throw ConfigError("sigma2_range", "must be [lo, hi]");
    c.sigma2_lo = get_number(r[0], "sigma2_range");
    c.sigma2_hi = get_number(r[1], "sigma2_range");
  }
  if (j.contains("rho_max")) c.rho_max = get_number(j.at("rho_max"), "rho_max");
  if (j.contains("km")) c.km = km_from_json(j.at("km"), "km");
  if (j.contains("tol")) c.tol = get_number(j.at("tol"), "tol");
  if (j.contains("quad_tol")) c.quad_tol = get_number(j.at("quad_tol"), "quad_tol");
  c.validate();
  return c;
}

VerifyReport run_verify(const VerifyConfig& config, int workers) {
  config.validate();
  const auto grid = config.grid();
  const std::size_t per_point = config.km.size();
  VerifyReport report;
  report.rows.resize(grid.size() * per_point);

  parallel_for(grid.size(), workers, [&](std::size_t i) {
    for (std::size_t q = 0; q < per_point; ++q) {
      VerifyRow& row = report.rows[i * per_point + q];
      row.point = static_cast<Index>(i);
      row.spec = grid[i];
      row.k = config.km[q].first;
      row.m = config.km[q].second;
      try {
        row.residual = proposition_residual(grid[i], {row.k, row.m}, config.quad_tol);
      } catch (const Error&) {
        row.residual = kNaN;
      }
      row.pass = std::abs(row.residual) < config.tol;
    }
  });

  for (const auto& row : report.rows) {
    report.all_pass = report.all_pass && row.pass;
    // NaN (a failed quadrature) propagates and marks the report as failed.
    const double a = std::abs(row.residual);
    if (!(a <= report.max_abs_residual)) report.max_abs_residual = a;
  }
  return report;
}

std::string verify_points_csv(const VerifyReport& r) {
  std::string text = "point,mu1,mu2,sigma1_sq,sigma2_sq,sigma12,rho,k,m,residual,pass\n";
  for (const auto& row : r.rows) {
    const auto& s = row.spec;
    text += std::to_string(row.point) + ',' + format_number(s.mu1) + ',' + format_number(s.mu2) + ',' +
            format_number(s.sigma1_sq) + ',' + format_number(s.sigma2_sq) + ',' + format_number(s.sigma12) + ',' +
            format_number(s.rho()) + ',' + std::to_string(row.k) + ',' + std::to_string(row.m) + ',' +
            format_number(row.residual) + ',' + (row.pass ? "1" : "0") + '\n';
  }
  return text;
}

namespace {

struct KmSummary {
  int k = 0;
  int m = 0;
  Index n_points = 0;
  double max_abs_residual = 0.0;
  Index worst_point = 0;
  bool pass = true;
};

std::vector<KmSummary> summarize_km(const VerifyReport& r) {
  std::vector<KmSummary> out;
  for (const auto& row : r.rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const KmSummary& s) { return s.k == row.k && s.m == row.m; });
    if (it == out.end()) {
      out.push_back({row.k, row.m, 0, 0.0, row.point, true});
      it = std::prev(out.end());
    }
    ++it->n_points;
    const double a = std::abs(row.residual);
    if (!(a <= it->max_abs_residual)) {
      it->max_abs_residual = a;
      it->worst_point = row.point;
    }
    it->pass = it->pass && row.pass;
  }
  return out;
}

}  // namespace

std::string verify_summary_csv(const VerifyReport& r) {
  std::string text = "k,m,n_points,max_abs_residual,worst_point,pass\n";
  for (const auto& s : summarize_km(r)) {
    text += std::to_string(s.k) + ',' + std::to_string(s.m) + ',' + std::to_string(s.n_points) + ',' +
            format_number(s.max_abs_residual) + ',' + std::to_string(s.worst_point) + ',' + (s.pass ? "1" : "0") +
            '\n';
  }
  return text;
}

json to_json(const VerifyReport& r) {
  json by_km = json::array();
  for (const auto& s : summarize_km(r)) {
    by_km.push_back({{"k", s.k},
                     {"m", s.m},
                     {"n_points", s.n_points},
                     {"max_abs_residual", number_or_null(s.max_abs_residual)},
                     {"worst_point", s.worst_point},
                     {"pass", s.pass}});
  }
  json failures = json::array();
  for (const auto& row : r.rows) {
    if (row.pass) continue;
    failures.push_back({{"point", row.point},
                        {"mu1", row.spec.mu1},
                        {"mu2", row.spec.mu2},
                        {"sigma1_sq", row.spec.sigma1_sq},
                        {"sigma2_sq", row.spec.sigma2_sq},
                        {"sigma12", row.spec.sigma12},
                        {"k", row.k},
                        {"m", row.m},
                        {"residual", number_or_null(row.residual)}});
  }
  json j;
  j["all_pass"] = r.all_pass;
  j["max_abs_residual"] = number_or_null(r.max_abs_residual);
  j["n_rows"] = r.rows.size();
  j["by_km"] = by_km;
  j["failures"] = failures;
  return j;
}

}  // namespace tobitiv
