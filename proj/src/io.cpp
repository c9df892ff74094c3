#include "tobitiv/io.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "tobitiv/errors.hpp"

namespace tobitiv {

namespace fs = std::filesystem;

std::string format_number(double v) {
  if (std::isnan(v)) return {};
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

double parse_number(const std::string& field, const std::string& context) {
  if (field.empty()) return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const char* first = field.data();
  const char* last = first + field.size();
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last) {
    throw Error(ErrorKind::Io, context + ": cannot parse number '" + field + "'");
  }
  return v;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path + " for writing");
  out << text;
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path);
}

void write_matrix_csv(const Eigen::MatrixXd& m, const std::string& path) {
  std::string text;
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      if (c) text += ',';
      text += format_number(m(r, c));
    }
    text += '\n';
  }
  write_text_file(path, text);
}

Eigen::MatrixXd read_matrix_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<double> row;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      const std::string field = line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      row.push_back(parse_number(field, path + ":" + std::to_string(line_no)));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw Error(ErrorKind::Io, path + ":" + std::to_string(line_no) + ": inconsistent column count");
    }
    rows.push_back(std::move(row));
  }
  Eigen::MatrixXd m(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows.front().size()));
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) m(r, c) = rows[r][c];
  }
  return m;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot open file");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path, std::string("invalid JSON: ") + e.what());
  }
}

json to_json(const Distribution& d) {
  using F = Distribution::Family;
  switch (d.family) {
    case F::Normal: return {{"family", "normal"}, {"mean", d.a}, {"sd", d.b}};
    case F::LogNormal: return {{"family", "lognormal"}, {"meanlog", d.a}, {"sdlog", d.b}};
    case F::ShiftedAbsNormal: return {{"family", "shifted_abs_normal"}, {"shift", d.a}, {"scale", d.b}};
    case F::Uniform: return {{"family", "uniform"}, {"lo", d.a}, {"hi", d.b}};
    case F::Constant: return {{"family", "constant"}, {"value", d.a}};
  }
  return {};
}

namespace {

double number_field(const json& j, const char* key, const std::string& field, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) throw ConfigError(field + "." + key, "must be a number");
  return j.at(key).get<double>();
}

double required_number(const json& j, const char* key, const std::string& field) {
  if (!j.contains(key)) throw ConfigError(field + "." + key, "is required");
  return number_field(j, key, field, 0.0);
}

Eigen::VectorXd vector_field(const json& j, const std::string& field) {
  if (!j.is_array()) throw ConfigError(field, "must be an array of numbers");
  Eigen::VectorXd v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(field, "must be an array of numbers");
    v[static_cast<Index>(i)] = j[i].get<double>();
  }
  return v;
}

Eigen::MatrixXd matrix_field(const json& j, const std::string& field) {
  if (!j.is_array() || j.empty()) throw ConfigError(field, "must be a non-empty array of rows");
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  Eigen::MatrixXd m(static_cast<Index>(j.size()), static_cast<Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw ConfigError(field, "rows must have equal length");
    m.row(static_cast<Index>(r)) = vector_field(j[r], field).transpose();
  }
  return m;
}

json vector_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

}  // namespace

Distribution distribution_from_json(const json& j, const std::string& field) {
  if (!j.is_object() || !j.contains("family") || !j.at("family").is_string()) {
    throw ConfigError(field, "distribution needs a string 'family'");
  }
  const std::string family = j.at("family").get<std::string>();
  Distribution d;
  if (family == "normal") {
    d = Distribution::normal(number_field(j, "mean", field, 0.0), number_field(j, "sd", field, 1.0));
  } else if (family == "lognormal") {
    d = Distribution::lognormal(number_field(j, "meanlog", field, 0.0), number_field(j, "sdlog", field, 1.0));
  } else if (family == "shifted_abs_normal") {
    d = Distribution::shifted_abs_normal(required_number(j, "shift", field), number_field(j, "scale", field, 1.0));
  } else if (family == "uniform") {
    d = Distribution::uniform(required_number(j, "lo", field), required_number(j, "hi", field));
  } else if (family == "constant") {
    d = Distribution::constant(required_number(j, "value", field));
  } else {
    throw ConfigError(field + ".family", "unknown distribution family '" + family + "'");
  }
  d.validate(field);
  return d;
}

json to_json(const PanelConfig& c) {
  json j;
  j["variant"] = std::string(to_string(c.variant));
  j["n_individuals"] = c.n_individuals;
  j["n_periods"] = c.n_periods;
  j["n_regressors"] = c.n_regressors;
  j["beta"] = vector_json(c.beta);
  json cov = json::array();
  for (Index r = 0; r < c.error_cov.rows(); ++r) cov.push_back(vector_json(c.error_cov.row(r).transpose()));
  j["error_cov"] = cov;
  if (c.factor_loadings) j["factor_loadings"] = vector_json(*c.factor_loadings);
  if (c.variance_fe_dist) j["variance_fe_dist"] = to_json(*c.variance_fe_dist);
  j["fe_dist"] = {{"index_coef", c.fe.index_coef}, {"noise_sd", c.fe.noise_sd}};
  json xs = json::array();
  for (const auto& d : c.x_dist) xs.push_back(to_json(d));
  j["x_dist"] = xs;
  if (c.z_dist) j["z_dist"] = to_json(*c.z_dist);
  j["sampling"] = std::string(to_string(c.sampling));
  j["seed"] = c.seed;
  return j;
}

PanelConfig panel_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("panel", "must be an object");
  if (!j.contains("variant") || !j.at("variant").is_string()) throw ConfigError("variant", "is required");
  const ModelVariant variant = parse_variant(j.at("variant").get<std::string>());

  if (!j.contains("beta")) throw ConfigError("beta", "is required");
  const Eigen::VectorXd beta = vector_field(j.at("beta"), "beta");

  auto integer = [&](const char* key, Index fallback) -> Index {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number_integer()) throw ConfigError(key, "must be an integer");
    return j.at(key).get<Index>();
  };
  const Index n = integer("n_individuals", 1000);
  const Index periods = integer("n_periods", variant == ModelVariant::CrossSection ? 1 : 2);
  if (n < 1) throw ConfigError("n_individuals", "must be positive");
  if (periods < 1) throw ConfigError("n_periods", "must be positive");

  std::uint64_t seed = 0;
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned() && !(j.at("seed").is_number_integer() && j.at("seed").get<long long>() >= 0)) {
      throw ConfigError("seed", "must be an unsigned 64-bit integer");
    }
    seed = j.at("seed").get<std::uint64_t>();
  }

  PanelConfig c = PanelConfig::defaults(variant, n, periods, beta, seed);
  c.n_regressors = integer("n_regressors", beta.size());

  if (j.contains("error_cov")) c.error_cov = matrix_field(j.at("error_cov"), "error_cov");
  if (j.contains("factor_loadings")) c.factor_loadings = vector_field(j.at("factor_loadings"), "factor_loadings");
  if (j.contains("variance_fe_dist")) {
    c.variance_fe_dist = distribution_from_json(j.at("variance_fe_dist"), "variance_fe_dist");
  }
  if (j.contains("fe_dist")) {
    const json& fe = j.at("fe_dist");
    if (!fe.is_object()) throw ConfigError("fe_dist", "must be an object");
    c.fe.index_coef = number_field(fe, "index_coef", "fe_dist", c.fe.index_coef);
    c.fe.noise_sd = number_field(fe, "noise_sd", "fe_dist", c.fe.noise_sd);
  }
  if (j.contains("x_dist")) {
    const json& xd = j.at("x_dist");
    c.x_dist.clear();
    if (xd.is_array()) {
      for (std::size_t k = 0; k < xd.size(); ++k) {
        c.x_dist.push_back(distribution_from_json(xd[k], "x_dist[" + std::to_string(k) + "]"));
      }
    } else {
      c.x_dist.assign(static_cast<std::size_t>(c.n_regressors), distribution_from_json(xd, "x_dist"));
    }
  }
  if (j.contains("z_dist")) c.z_dist = distribution_from_json(j.at("z_dist"), "z_dist");
  if (j.contains("sampling")) {
    if (!j.at("sampling").is_string()) throw ConfigError("sampling", "must be a string");
    c.sampling = parse_sampling(j.at("sampling").get<std::string>());
  }
  c.validate();
  return c;
}

void save_dataset(const PanelDataset& ds, const std::string& dir, bool with_truth) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create directory " + dir + ": " + ec.message());

  json meta;
  meta["format"] = "tobitiv-panel";
  meta["version"] = 1;
  meta["variant"] = std::string(to_string(ds.config.variant));
  meta["sampling"] = std::string(to_string(ds.config.sampling));
  meta["n_individuals"] = ds.n_individuals();
  meta["n_periods"] = ds.n_periods();
  meta["n_regressors"] = ds.n_regressors();
  meta["has_z"] = ds.z.has_value();
  meta["retained_cells"] = ds.retained_cells();
  meta["config"] = to_json(ds.config);
  write_text_file((fs::path(dir) / "meta.json").string(), meta.dump(2) + "\n");

  write_matrix_csv(ds.y, (fs::path(dir) / "y.csv").string());
  write_matrix_csv(ds.x, (fs::path(dir) / "x.csv").string());
  if (ds.z) write_matrix_csv(*ds.z, (fs::path(dir) / "z.csv").string());

  if (with_truth && ds.has_truth()) {
    const fs::path truth = fs::path(dir) / "truth";
    fs::create_directories(truth, ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create directory " + truth.string());
    write_matrix_csv(ds.latent_y, (truth / "latent_y.csv").string());
    write_matrix_csv(ds.alpha, (truth / "alpha.csv").string());
    if (ds.sigma2_individual.size()) {
      write_matrix_csv(ds.sigma2_individual, (truth / "sigma2_individual.csv").string());
    }
  }
}

PanelDataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  if (!fs::exists(root / "meta.json")) throw Error(ErrorKind::Io, dir + " has no meta.json");
  const json meta = read_json_file((root / "meta.json").string());

  PanelDataset ds;
  try {
    ds.config = panel_config_from_json(meta.at("config"));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Io, "malformed meta.json: " + std::string(e.what()));
  }
  ds.y = read_matrix_csv((root / "y.csv").string());
  ds.x = read_matrix_csv((root / "x.csv").string());
  if (fs::exists(root / "z.csv")) ds.z = read_matrix_csv((root / "z.csv").string());

  const Index n = meta.value("n_individuals", Index{0});
  const Index periods = meta.value("n_periods", Index{0});
  const Index k = meta.value("n_regressors", Index{0});
  if (ds.y.rows() != n || ds.y.cols() != periods) throw Error(ErrorKind::Io, "y.csv dimensions disagree with meta.json");
  if (ds.x.rows() != n * periods || ds.x.cols() != k) {
    throw Error(ErrorKind::Io, "x.csv dimensions disagree with meta.json");
  }
  if (ds.z && (ds.z->rows() != n || ds.z->cols() != periods)) {
    throw Error(ErrorKind::Io, "z.csv dimensions disagree with meta.json");
  }
  return ds;
}

}  // namespace tobitiv
