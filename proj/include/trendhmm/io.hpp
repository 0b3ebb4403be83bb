#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include <json.hpp>

#include "trendhmm/model.hpp"

namespace trendhmm::io {

/// CSV with header `t,y[,x,b]`; x and b are written one-based.
void write_trajectory_csv(std::ostream& out, const Trajectory& traj);
void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj);
Trajectory read_trajectory_csv(std::istream& in);
Trajectory read_trajectory_csv(const std::filesystem::path& path);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

/// Trend document: {"basis": "legendre", "n_scale": N, "coefficients": [...]}
/// or {"monomial": [a0, a1, ...], "n_scale": N}. The n_scale entry may be
/// omitted when default_n_scale is supplied.
TrendPoly trend_from_json(const nlohmann::json& doc, std::int64_t default_n_scale = 0);
nlohmann::json trend_to_json(const TrendPoly& trend);

/// Parameter document; states are listed in order. Validation is left to the
/// caller.
ModelParams params_from_json(const nlohmann::json& doc, std::int64_t default_n_scale = 0);
nlohmann::json params_to_json(const ModelParams& params);

/// Creates parent directories. Throws std::runtime_error naming the path.
void write_text_file(const std::filesystem::path& path, const std::string& contents);

}  // namespace trendhmm::io
