#include "trendhmm/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "trendhmm/errors.hpp"

namespace trendhmm::io {

using nlohmann::json;

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_trajectory_csv(std::ostream& out, const Trajectory& traj) {
  const bool has_x = traj.hidden_states.has_value();
  const bool has_b = traj.blocks.has_value();
  out << "t,y";
  if (has_x) out << ",x";
  if (has_b) out << ",b";
  out << '\n';
  for (std::size_t i = 0; i < traj.length(); ++i) {
    out << (i + 1) << ',' << format_double(traj.observations[i]);
    if (has_x) out << ',' << ((*traj.hidden_states)[i] + 1);
    if (has_b) out << ',' << ((*traj.blocks)[i] + 1);
    out << '\n';
  }
}

void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj) {
  std::ostringstream buf;
  write_trajectory_csv(buf, traj);
  write_text_file(path, buf.str());
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    cells.push_back(cell);
  }
  return cells;
}

double parse_double(const std::string& s, std::size_t line) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ValidationError("line " + std::to_string(line) + ": not a number: '" + s + "'");
  return v;
}

long long parse_int(const std::string& s, std::size_t line) {
  long long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ValidationError("line " + std::to_string(line) + ": not an integer: '" + s + "'");
  return v;
}

}  // namespace

Trajectory read_trajectory_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("trajectory CSV is empty");
  const auto header = split(line);
  int col_t = -1, col_y = -1, col_x = -1, col_b = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto& h = header[i];
    const int idx = static_cast<int>(i);
    if (h == "t") col_t = idx;
    else if (h == "y") col_y = idx;
    else if (h == "x") col_x = idx;
    else if (h == "b") col_b = idx;
  }
  if (col_t < 0 || col_y < 0) throw ValidationError("trajectory CSV header must contain t and y");

  Trajectory traj;
  std::vector<int> states;
  std::vector<int> blocks;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split(line);
    if (cells.size() != header.size())
      throw ValidationError("line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) + " fields");
    const long long t = parse_int(cells[static_cast<std::size_t>(col_t)], lineno);
    if (t != static_cast<long long>(traj.length() + 1))
      throw ValidationError("line " + std::to_string(lineno) + ": time indices must run 1..n in order");
    traj.observations.push_back(parse_double(cells[static_cast<std::size_t>(col_y)], lineno));
    if (col_x >= 0) states.push_back(static_cast<int>(parse_int(cells[static_cast<std::size_t>(col_x)], lineno)) - 1);
    if (col_b >= 0) blocks.push_back(static_cast<int>(parse_int(cells[static_cast<std::size_t>(col_b)], lineno)) - 1);
  }
  if (col_x >= 0) traj.hidden_states = std::move(states);
  if (col_b >= 0) traj.blocks = std::move(blocks);
  traj.validate();
  return traj;
}

Trajectory read_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_trajectory_csv(in);
}

TrendPoly trend_from_json(const json& doc, std::int64_t default_n_scale) {
  if (!doc.is_object()) throw ValidationError("trend must be an object");
  std::int64_t n_scale = default_n_scale;
  if (doc.contains("n_scale")) n_scale = doc.at("n_scale").get<std::int64_t>();
  if (n_scale <= 0) throw ValidationError("trend: n_scale must be a positive integer");
  if (doc.contains("monomial")) {
    const auto a = doc.at("monomial").get<std::vector<double>>();
    return TrendPoly::from_monomial(a, n_scale);
  }
  if (doc.contains("coefficients")) {
    const std::string basis = doc.value("basis", "legendre");
    if (basis != "legendre") throw ValidationError("trend: unknown basis '" + basis + "'");
    return TrendPoly(doc.at("coefficients").get<std::vector<double>>(), n_scale);
  }
  throw ValidationError("trend needs 'monomial' or 'coefficients'");
}

json trend_to_json(const TrendPoly& trend) {
  return json{{"basis", "legendre"}, {"n_scale", trend.n_scale()}, {"coefficients", trend.coefficients()}};
}

ModelParams params_from_json(const json& doc, std::int64_t default_n_scale) {
  if (!doc.is_object()) throw ValidationError("parameters must be an object");
  for (const char* key : {"transition", "variances", "trends"})
    if (!doc.contains(key)) throw ValidationError(std::string("parameters: missing field '") + key + "'");

  ModelParams p;
  const auto rows = doc.at("transition").get<std::vector<std::vector<double>>>();
  p.n_states = doc.value("n_states", static_cast<int>(rows.size()));
  const auto k = static_cast<std::size_t>(p.n_states);
  if (rows.size() != k) throw ValidationError("parameters: transition must have n_states rows");
  p.transition.resize(p.n_states, p.n_states);
  for (std::size_t i = 0; i < k; ++i) {
    if (rows[i].size() != k) throw ValidationError("parameters: transition must be square");
    for (std::size_t j = 0; j < k; ++j) p.transition(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  const auto vars = doc.at("variances").get<std::vector<double>>();
  if (vars.size() != k) throw ValidationError("parameters: variances must have n_states entries");
  p.variances = Eigen::Map<const Eigen::VectorXd>(vars.data(), static_cast<Eigen::Index>(k));
  if (doc.contains("initial_dist")) {
    const auto pi = doc.at("initial_dist").get<std::vector<double>>();
    if (pi.size() != k) throw ValidationError("parameters: initial_dist must have n_states entries");
    p.initial_dist = Eigen::Map<const Eigen::VectorXd>(pi.data(), static_cast<Eigen::Index>(k));
  } else {
    p.initial_dist = uniform_distribution(p.n_states);
  }
  const auto& trends = doc.at("trends");
  if (!trends.is_array() || trends.size() != k) throw ValidationError("parameters: trends must have n_states entries");
  for (const auto& t : trends) p.trends.push_back(trend_from_json(t, default_n_scale));
  p.sigma_minus = doc.value("sigma_minus", 0.0);
  return p;
}

json params_to_json(const ModelParams& params) {
  json doc;
  doc["n_states"] = params.n_states;
  doc["initial_dist"] = std::vector<double>(params.initial_dist.data(), params.initial_dist.data() + params.n_states);
  json rows = json::array();
  for (int x = 0; x < params.n_states; ++x) {
    std::vector<double> row(static_cast<std::size_t>(params.n_states));
    for (int y = 0; y < params.n_states; ++y) row[static_cast<std::size_t>(y)] = params.transition(x, y);
    rows.push_back(row);
  }
  doc["transition"] = rows;
  doc["variances"] = std::vector<double>(params.variances.data(), params.variances.data() + params.n_states);
  json trends = json::array();
  for (const auto& t : params.trends) trends.push_back(trend_to_json(t));
  doc["trends"] = trends;
  doc["sigma_minus"] = params.sigma_minus;
  return doc;
}

void write_text_file(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw std::runtime_error("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << contents;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace trendhmm::io
