#include "trendhmm/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "trendhmm/errors.hpp"
#include "trendhmm/inference.hpp"
#include "trendhmm/io.hpp"

namespace trendhmm::experiments {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Runs task(i) for i in [0, count) on up to `jobs` threads. The first
// exception is rethrown after all workers finish.
template <typename F>
void parallel_for(std::size_t count, int jobs, F&& task) {
  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, count); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

template <typename T>
T field(const json& doc, const char* key, const std::string& where) {
  if (!doc.contains(key)) throw ValidationError(where + ": missing field '" + key + "'");
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(where + ": field '" + key + "' has the wrong type");
  }
}

template <typename T>
T field_or(const json& doc, const char* key, T fallback, const std::string& where) {
  if (!doc.contains(key)) return fallback;
  return field<T>(doc, key, where);
}

std::string sanitize(std::string s) {
  for (auto& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

double median(std::vector<double> v) {
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double metric_value(const ErrorRecord& r, std::size_t metric) {
  const std::size_t k = r.err_trend_sup.size();
  if (metric < k) return r.err_trend_sup[metric];
  return metric == k ? r.err_q_frobenius : r.err_var_max;
}

std::string fmt(double v) { return io::format_double(v); }

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
  return mix(mix(master ^ mix(a + 0x632be59bd9b4e019ULL)) ^ mix(b + 0x8cb92ba72f3d8dd7ULL));
}

void ExperimentConfig::validate() const {
  truth.validate();
  fit.validate();
  if (n_values.empty()) throw ValidationError("n_values must not be empty");
  for (std::size_t i = 0; i < n_values.size(); ++i) {
    if (n_values[i] < 1) throw ValidationError("n_values entries must be >= 1");
    if (i > 0 && n_values[i] <= n_values[i - 1]) throw ValidationError("n_values must be strictly increasing");
  }
  if (n_replications < 1) throw ValidationError("n_replications must be >= 1");
  if (fit.n_states != truth.n_states) throw ValidationError("fit.n_states must equal truth.n_states");
  for (int s : diagnostics.segments)
    if (s < 1) throw ValidationError("diagnostics.segments entries must be >= 1");
  if (diagnostics.integrated_grid < 1) throw ValidationError("diagnostics.integrated_grid must be >= 1");
}

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ValidationError(source + ": parse error: " + e.what());
  }
  if (!doc.is_object()) throw ValidationError(source + ": top level must be an object");

  ExperimentConfig cfg;
  const std::string kind = field<std::string>(doc, "kind", source);
  if (kind == "rate") cfg.kind = Kind::rate;
  else if (kind == "fixed_n") cfg.kind = Kind::fixed_n;
  else if (kind == "diagnostics") cfg.kind = Kind::diagnostics;
  else throw ValidationError(source + ": field 'kind' must be rate, fixed_n or diagnostics");

  cfg.n_values = field<std::vector<std::size_t>>(doc, "n_values", source);
  if (cfg.n_values.empty()) throw ValidationError(source + ": field 'n_values' must not be empty");
  const auto horizon = static_cast<std::int64_t>(*std::max_element(cfg.n_values.begin(), cfg.n_values.end()));

  if (!doc.contains("truth")) throw ValidationError(source + ": missing field 'truth'");
  try {
    cfg.truth = io::params_from_json(doc.at("truth"), horizon);
  } catch (const ValidationError& e) {
    throw ValidationError(source + ": truth: " + e.what());
  } catch (const json::exception& e) {
    throw ValidationError(source + ": truth: malformed field (" + e.what() + ")");
  }

  cfg.n_replications = field_or<int>(doc, "n_replications", 1, source);
  cfg.master_seed = field_or<std::uint64_t>(doc, "master_seed", 0, source);
  cfg.output_dir = field_or<std::string>(doc, "output_dir", "out", source);

  const json fit = doc.value("fit", json::object());
  const std::string fw = source + ": fit";
  cfg.fit.n_states = field_or<int>(fit, "n_states", cfg.truth.n_states, fw);
  cfg.fit.degree_bound = field_or<int>(fit, "degree_bound", 4, fw);
  cfg.fit.sigma_minus = field_or<double>(fit, "sigma_minus", 0.0, fw);
  cfg.fit.max_iters = field_or<int>(fit, "max_iters", 500, fw);
  cfg.fit.rel_tol = field_or<double>(fit, "rel_tol", 1e-8, fw);
  cfg.fit.n_restarts = field_or<int>(fit, "n_restarts", 10, fw);
  cfg.fit.seed = field_or<std::uint64_t>(fit, "seed", 0, fw);
  cfg.fit.variance_floor = field_or<double>(fit, "variance_floor", ModelParams::kVarianceFloor, fw);

  const json diag = doc.value("diagnostics", json::object());
  const std::string dw = source + ": diagnostics";
  cfg.diagnostics.segments = field_or<std::vector<int>>(diag, "segments", cfg.diagnostics.segments, dw);
  cfg.diagnostics.forgetting_t = field_or<std::size_t>(diag, "forgetting_t", cfg.diagnostics.forgetting_t, dw);
  cfg.diagnostics.integrated_grid = field_or<int>(diag, "integrated_grid", cfg.diagnostics.integrated_grid, dw);
  cfg.diagnostics.mc_length = field_or<std::size_t>(diag, "mc_length", cfg.diagnostics.mc_length, dw);
  cfg.diagnostics.fit = field_or<bool>(diag, "fit", cfg.diagnostics.fit, dw);

  try {
    cfg.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(source + ": " + e.what());
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

ErrorRecord evaluate_fit(const ModelParams& est, const ModelParams& truth, std::size_t n) {
  const auto horizon = static_cast<std::int64_t>(n);
  const auto perm = align_states(est, truth, horizon);
  const ModelParams aligned = est.relabeled(perm);
  ErrorRecord r;
  r.n = n;
  numerics::Permutation identity(static_cast<std::size_t>(truth.n_states));
  for (int x = 0; x < truth.n_states; ++x) identity[static_cast<std::size_t>(x)] = x;
  r.err_trend_sup = theory::sup_trend_error(aligned, truth, identity, horizon);
  r.err_q_frobenius = (truth.transition - aligned.transition).norm();
  r.err_var_max = (truth.variances - aligned.variances).cwiseAbs().maxCoeff();
  return r;
}

std::vector<ErrorRecord> run_rate_experiment(const ExperimentConfig& config, const ExperimentOptions& options) {
  config.validate();
  if (config.kind != Kind::rate) throw ValidationError("run_rate_experiment: kind must be rate");
  const std::size_t n_max = config.n_values.back();
  const auto reps = static_cast<std::size_t>(config.n_replications);
  std::vector<std::vector<ErrorRecord>> per_rep(reps);

  parallel_for(reps, options.jobs, [&](std::size_t r) {
    const Trajectory full = simulate(config.truth, n_max, derive_seed(config.master_seed, r + 1));
    std::optional<ModelParams> previous;
    for (std::size_t n : config.n_values) {
      const auto start = std::chrono::steady_clock::now();
      ErrorRecord rec;
      try {
        FitConfig fc = config.fit;
        fc.seed = derive_seed(config.master_seed, r + 1, n);
        std::vector<ModelParams> warm;
        if (previous && !options.cold_start) warm.push_back(*previous);
        const FitResult fit = em_fit(full.prefix(n), fc, warm);
        rec = evaluate_fit(fit.params, config.truth, n);
        rec.loglik = fit.loglik();
        previous = fit.params;
      } catch (const std::exception& e) {
        rec = ErrorRecord{};
        rec.n = n;
        rec.err_trend_sup.assign(static_cast<std::size_t>(config.truth.n_states), kNaN);
        rec.err_q_frobenius = kNaN;
        rec.err_var_max = kNaN;
        rec.loglik = kNaN;
        rec.status = "error: " + sanitize(e.what());
        previous.reset();
      }
      rec.replication = static_cast<int>(r + 1);
      if (options.record_timing)
        rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      per_rep[r].push_back(std::move(rec));
    }
  });

  std::vector<ErrorRecord> out;
  for (auto& v : per_rep)
    for (auto& rec : v) out.push_back(std::move(rec));
  return out;
}

FixedNReport run_fixed_n_experiment(const ExperimentConfig& config, const ExperimentOptions& options) {
  (void)options;
  config.validate();
  const std::size_t n = config.n_values.back();
  const auto horizon = static_cast<std::int64_t>(n);
  const Trajectory traj = simulate(config.truth, n, derive_seed(config.master_seed, 1));
  FitConfig fc = config.fit;
  fc.seed = derive_seed(config.master_seed, 1, n);
  const FitResult fit = em_fit(traj, fc);

  FixedNReport rep;
  rep.n = n;
  const auto perm = align_states(fit.params, config.truth, horizon);
  rep.fitted = fit.params.relabeled(perm);
  rep.loglik = fit.loglik();
  rep.iterations = fit.iterations;
  rep.converged = fit.converged;
  const ErrorRecord errs = evaluate_fit(rep.fitted, config.truth, n);
  rep.trend_sup_errors = errs.err_trend_sup;
  rep.err_q_frobenius = errs.err_q_frobenius;
  rep.err_var_max = errs.err_var_max;
  rep.tube = theory::minimal_tube(rep.fitted, config.truth, horizon);
  const BlockStructure blocks = compute_blocks(config.truth, n);
  const auto assignment = theory::assign_blocks(rep.fitted, blocks, horizon);
  rep.block_gap = theory::block_gap(rep.fitted, traj, assignment.blockmap);
  return rep;
}

std::string format_report(const FixedNReport& r) {
  std::ostringstream out;
  const int k = r.fitted.n_states;
  out << "n = " << r.n << "\n";
  out << "loglik = " << fmt(r.loglik) << "\n";
  out << "iterations = " << r.iterations << (r.converged ? " (converged)" : " (not converged)") << "\n";
  out << "transition (aligned):\n";
  for (int x = 0; x < k; ++x) {
    out << " ";
    for (int y = 0; y < k; ++y) out << ' ' << fmt(r.fitted.transition(x, y));
    out << "\n";
  }
  out << "variances:";
  for (int x = 0; x < k; ++x) out << ' ' << fmt(r.fitted.variances[x]);
  out << "\ntrend sup errors:";
  for (double e : r.trend_sup_errors) out << ' ' << fmt(e);
  out << "\nerr_q_frobenius = " << fmt(r.err_q_frobenius) << "\n";
  out << "err_var_max = " << fmt(r.err_var_max) << "\n";
  out << "minimal tube M = " << fmt(r.tube.M) << " (cover " << (r.tube.cover_ok ? "ok" : "fail") << ", containment "
      << (r.tube.containment_ok ? "ok" : "fail") << ")\n";
  out << "block_gap = " << fmt(r.block_gap) << "\n";
  return out.str();
}

std::vector<std::string> metric_names(int n_states) {
  std::vector<std::string> names;
  for (int x = 1; x <= n_states; ++x) names.push_back("err_trend_sup_" + std::to_string(x));
  names.emplace_back("err_q_frobenius");
  names.emplace_back("err_var_max");
  return names;
}

std::vector<SlopeRow> fit_slopes(const std::vector<ErrorRecord>& records) {
  std::size_t k = 0;
  for (const auto& r : records)
    if (r.ok()) k = std::max(k, r.err_trend_sup.size());
  const auto names = metric_names(static_cast<int>(k));
  std::vector<SlopeRow> rows;
  for (std::size_t m = 0; m < names.size(); ++m) {
    std::map<std::size_t, std::pair<double, int>> sums;
    for (const auto& r : records) {
      if (!r.ok()) continue;
      const double v = metric_value(r, m);
      if (!std::isfinite(v)) continue;
      auto& s = sums[r.n];
      s.first += v;
      s.second += 1;
    }
    std::vector<double> xs, ys;
    for (const auto& [n, s] : sums) {
      const double mean = s.first / s.second;
      if (!(mean > 0.0)) continue;
      xs.push_back(std::log10(static_cast<double>(n)));
      ys.push_back(std::log10(mean));
    }
    if (xs.size() < 2) throw ValidationError("fit_slopes: metric " + names[m] + " has fewer than 2 usable points");
    rows.push_back({names[m], numerics::fit_line(xs, ys), xs.size()});
  }
  return rows;
}

void write_error_csv(std::ostream& out, const std::vector<ErrorRecord>& records, int n_states) {
  out << "replication,n";
  for (int x = 1; x <= n_states; ++x) out << ",err_trend_sup_" << x;
  out << ",err_q_frobenius,err_var_max,loglik,wall_time_s,status\n";
  for (const auto& r : records) {
    out << r.replication << ',' << r.n;
    for (double e : r.err_trend_sup) out << ',' << fmt(e);
    out << ',' << fmt(r.err_q_frobenius) << ',' << fmt(r.err_var_max) << ',' << fmt(r.loglik) << ','
        << fmt(r.wall_time_s) << ',' << sanitize(r.status) << '\n';
  }
}

std::vector<ErrorRecord> read_error_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("errors.csv is empty");
  std::size_t k = 0;
  {
    std::istringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ','))
      if (cell.rfind("err_trend_sup_", 0) == 0) ++k;
  }
  auto num = [](const std::string& s) {
    if (s == "nan" || s == "-nan") return kNaN;
    return std::stod(s);
  };
  std::vector<ErrorRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != k + 7) throw ValidationError("errors.csv: malformed row '" + line + "'");
    ErrorRecord r;
    r.replication = std::stoi(cells[0]);
    r.n = static_cast<std::size_t>(std::stoull(cells[1]));
    for (std::size_t x = 0; x < k; ++x) r.err_trend_sup.push_back(num(cells[2 + x]));
    r.err_q_frobenius = num(cells[2 + k]);
    r.err_var_max = num(cells[3 + k]);
    r.loglik = num(cells[4 + k]);
    r.wall_time_s = num(cells[5 + k]);
    r.status = cells[6 + k];
    records.push_back(std::move(r));
  }
  return records;
}

void write_outputs(const std::vector<ErrorRecord>& records, const std::string& report,
                   const std::filesystem::path& output_dir, int n_states) {
  {
    std::ostringstream buf;
    write_error_csv(buf, records, n_states);
    io::write_text_file(output_dir / "errors.csv", buf.str());
  }
  {
    std::ostringstream buf;
    buf << "metric,slope,intercept,n_points\n";
    try {
      for (const auto& s : fit_slopes(records))
        buf << s.metric << ',' << fmt(s.line.slope) << ',' << fmt(s.line.intercept) << ',' << s.n_points << '\n';
    } catch (const ValidationError&) {
      // Too few distinct n for a slope: header only.
    }
    io::write_text_file(output_dir / "slopes.csv", buf.str());
  }
  io::write_text_file(output_dir / "report.txt", report);

  const auto names = metric_names(n_states);
  for (std::size_t m = 0; m < names.size(); ++m) {
    std::map<std::size_t, std::vector<double>> by_n;
    for (const auto& r : records) {
      if (!r.ok()) continue;
      const double v = metric_value(r, m);
      if (std::isfinite(v) && v > 0.0) by_n[r.n].push_back(v);
    }
    std::ostringstream buf;
    buf << "x,y,ymin,ymax\n";
    for (const auto& [n, vals] : by_n) {
      double sum = 0.0;
      for (double v : vals) sum += v;
      const auto [lo, hi] = std::minmax_element(vals.begin(), vals.end());
      buf << fmt(std::log10(static_cast<double>(n))) << ',' << fmt(std::log10(sum / vals.size())) << ','
          << fmt(std::log10(*lo)) << ',' << fmt(std::log10(*hi)) << '\n';
    }
    io::write_text_file(output_dir / ("plotdata_" + names[m] + ".csv"), buf.str());
  }
}

DiagnosticsReport run_diagnostics(const ExperimentConfig& config) {
  config.validate();
  DiagnosticsReport rep;
  const std::size_t n = config.n_values.back();
  const auto horizon = static_cast<std::int64_t>(n);
  rep.n = n;
  const ModelParams& truth = config.truth;
  const Trajectory traj = simulate(truth, n, derive_seed(config.master_seed, 1));
  const BlockStructure blocks = compute_blocks(truth, n);

  for (std::size_t m : config.n_values)
    rep.block_gaps.emplace_back(m, theory::block_gap(truth, traj.prefix(m), blocks.block_of_state));

  ModelParams theta = truth;
  if (config.diagnostics.fit) {
    FitConfig fc = config.fit;
    fc.seed = derive_seed(config.master_seed, 1, n);
    const FitResult fit = em_fit(traj, fc);
    theta = fit.params.relabeled(align_states(fit.params, truth, horizon));
    rep.tube = theory::minimal_tube(theta, truth, horizon);
  }

  const auto assignment = theory::assign_blocks(theta, blocks, horizon);
  const double reference = theory::block_loglik(theta, traj, assignment.blockmap);
  for (int segs : config.diagnostics.segments) {
    const double h = theory::homogenized_loglik(theta, traj, blocks, assignment.blockmap, segs);
    rep.homogenization_gaps.emplace_back(segs, std::abs(reference - h) / static_cast<double>(n));
  }

  // The forgetting bound needs a positive lower bound on Q; use the smallest
  // entry of the true transition matrix when the truth declares none.
  ModelParams mixing = truth;
  if (!(mixing.sigma_minus > 0.0)) mixing.sigma_minus = truth.transition.minCoeff();
  if (mixing.sigma_minus > 0.0 && mixing.sigma_minus < 0.5) {
    const auto consts = theory::forgetting_constants(mixing.sigma_minus);
    rep.forgetting_rho = consts.rho;
    rep.forgetting_c = consts.c;
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(truth.n_states);
    Eigen::VectorXd nu = Eigen::VectorXd::Zero(truth.n_states);
    mu[0] = 1.0;
    nu[truth.n_states - 1] = 1.0;
    rep.forgetting = theory::filter_forgetting_curve(mixing, traj, mu, nu, std::min(config.diagnostics.forgetting_t, n));
  }

  const std::size_t mc = config.diagnostics.mc_length > 0 ? config.diagnostics.mc_length : n;
  rep.integrated = theory::integrated_loglik(truth, truth, blocks, horizon, config.diagnostics.integrated_grid, mc,
                                             derive_seed(config.master_seed, 2));
  rep.normalized_loglik = log_forward(truth, traj).loglik / static_cast<double>(n);
  return rep;
}

void write_diagnostics(const DiagnosticsReport& r, const std::filesystem::path& output_dir) {
  {
    std::ostringstream buf;
    buf << "n,block_gap\n";
    for (const auto& [n, g] : r.block_gaps) buf << n << ',' << fmt(g) << '\n';
    io::write_text_file(output_dir / "block_gap.csv", buf.str());
  }
  {
    std::ostringstream buf;
    buf << "segments,gap\n";
    for (const auto& [s, g] : r.homogenization_gaps) buf << s << ',' << fmt(g) << '\n';
    io::write_text_file(output_dir / "homogenization.csv", buf.str());
  }
  {
    std::ostringstream buf;
    buf << "t,gap,bound\n";
    for (std::size_t t = 1; t <= r.forgetting.size(); ++t)
      buf << t << ',' << fmt(r.forgetting[t - 1]) << ',' << fmt(r.forgetting_c * std::pow(r.forgetting_rho, static_cast<double>(t)))
          << '\n';
    io::write_text_file(output_dir / "forgetting.csv", buf.str());
  }
  std::ostringstream rep;
  rep << "n = " << r.n << "\n";
  if (r.tube) {
    rep << "minimal tube M = " << fmt(r.tube->M) << " (cover " << (r.tube->cover_ok ? "ok" : "fail")
        << ", containment " << (r.tube->containment_ok ? "ok" : "fail") << ")\n";
    rep << "per-pair sup distances (true x estimated):\n";
    for (Eigen::Index x = 0; x < r.tube->per_pair_sup.rows(); ++x) {
      rep << " ";
      for (Eigen::Index y = 0; y < r.tube->per_pair_sup.cols(); ++y) rep << ' ' << fmt(r.tube->per_pair_sup(x, y));
      rep << "\n";
    }
  }
  rep << "integrated_loglik(truth) = " << fmt(r.integrated.value) << " +/- " << fmt(r.integrated.std_error) << "\n";
  rep << "loglik(truth) / n = " << fmt(r.normalized_loglik) << "\n";
  if (!r.forgetting.empty())
    rep << "forgetting rho = " << fmt(r.forgetting_rho) << ", C = " << fmt(r.forgetting_c) << "\n";
  io::write_text_file(output_dir / "report.txt", rep.str());
}

std::string format_rate_report(const std::vector<ErrorRecord>& records, int n_states) {
  std::ostringstream out;
  const auto names = metric_names(n_states);
  std::map<std::size_t, std::vector<const ErrorRecord*>> by_n;
  std::size_t failed = 0;
  for (const auto& r : records) {
    if (r.ok())
      by_n[r.n].push_back(&r);
    else
      ++failed;
  }
  out << "records = " << records.size() << " (failed " << failed << ")\n";
  out << "median errors by n:\n";
  for (const auto& [n, rs] : by_n) {
    out << "  n = " << n;
    for (std::size_t m = 0; m < names.size(); ++m) {
      std::vector<double> v;
      for (const auto* r : rs) v.push_back(metric_value(*r, m));
      out << "  " << names[m] << "=" << fmt(median(v));
    }
    out << "\n";
  }
  try {
    out << "slopes (log10 mean error vs log10 n):\n";
    for (const auto& s : fit_slopes(records)) out << "  " << s.metric << " " << fmt(s.line.slope) << "\n";
  } catch (const ValidationError& e) {
    out << "  unavailable: " << e.what() << "\n";
  }
  return out.str();
}

}  // namespace trendhmm::experiments
