#ifndef TOBITIV_IO_HPP
#define TOBITIV_IO_HPP

#include <Eigen/Dense>

#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "tobitiv/panel_sim.hpp"

namespace tobitiv {

using json = nlohmann::json;

/// Shortest-round-trip is not enough for diffing across tools; every number
/// is written with 17 significant digits. NaN is written as an empty field.
std::string format_number(double v);

/// Parses a CSV numeric field; empty means NaN.
double parse_number(const std::string& field, const std::string& context);

/// Comma-separated, LF line endings, no header. An empty line is a single
/// missing value.
void write_matrix_csv(const Eigen::MatrixXd& m, const std::string& path);
Eigen::MatrixXd read_matrix_csv(const std::string& path);

json to_json(const Distribution& d);
Distribution distribution_from_json(const json& j, const std::string& field);

json to_json(const PanelConfig& c);
/// Missing fields fall back to PanelConfig::defaults for the variant.
PanelConfig panel_config_from_json(const json& j);

json read_json_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace tobitiv

#endif  // TOBITIV_IO_HPP
