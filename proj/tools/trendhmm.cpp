// trendhmm: simulate, fit and study hidden Markov models with polynomial trends.
//
// Exit codes: 0 success, 1 validation error (bad arguments or config),
// 2 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "trendhmm/errors.hpp"
#include "trendhmm/estimation.hpp"
#include "trendhmm/experiments.hpp"
#include "trendhmm/io.hpp"

namespace fs = std::filesystem;
using namespace trendhmm;

namespace {

experiments::ExperimentConfig load(const std::string& path) {
  auto cfg = experiments::load_config(path);
  if (const char* env = std::getenv("TRENDHMM_SEED")) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument(env);
      cfg.master_seed = v;
    } catch (const std::exception&) {
      throw ValidationError(std::string("TRENDHMM_SEED is not an unsigned integer: ") + env);
    }
  }
  return cfg;
}

int cmd_simulate(const std::string& config_path, const fs::path& out) {
  const auto cfg = load(config_path);
  const std::size_t n = cfg.n_values.back();
  const Trajectory traj = simulate(cfg.truth, n, experiments::derive_seed(cfg.master_seed, 1));
  io::write_trajectory_csv(out / "trajectory.csv", traj);
  io::write_text_file(out / "truth.json", io::params_to_json(cfg.truth).dump(2) + "\n");
  return 0;
}

int cmd_fit(const std::string& config_path, const std::string& data_path, const fs::path& out) {
  const auto cfg = load(config_path);
  const Trajectory traj = io::read_trajectory_csv(data_path);
  FitConfig fc = cfg.fit;
  fc.seed = experiments::derive_seed(cfg.master_seed, 1, traj.length());
  const FitResult fit = em_fit(traj, fc);

  io::write_text_file(out / "fit.json", io::params_to_json(fit.params).dump(2) + "\n");
  std::ostringstream trace;
  trace << "iteration,loglik\n";
  for (std::size_t i = 0; i < fit.loglik_trace.size(); ++i) trace << i << ',' << io::format_double(fit.loglik_trace[i]) << '\n';
  io::write_text_file(out / "loglik_trace.csv", trace.str());

  std::ostringstream rep;
  rep << "n = " << traj.length() << "\n";
  rep << "loglik = " << io::format_double(fit.loglik()) << "\n";
  rep << "iterations = " << fit.iterations << (fit.converged ? " (converged)" : " (not converged)") << "\n";
  rep << "best restart = " << fit.best_restart << "\n";
  rep << "restart logliks:";
  for (double v : fit.restart_logliks) rep << ' ' << io::format_double(v);
  rep << "\n";
  if (fit.params.n_states == cfg.truth.n_states) {
    const auto err = experiments::evaluate_fit(fit.params, cfg.truth, traj.length());
    rep << "against config truth: trend sup errors";
    for (double e : err.err_trend_sup) rep << ' ' << io::format_double(e);
    rep << ", err_q_frobenius " << io::format_double(err.err_q_frobenius) << ", err_var_max "
        << io::format_double(err.err_var_max) << "\n";
  }
  io::write_text_file(out / "report.txt", rep.str());
  return 0;
}

int cmd_experiment(const std::string& config_path, const fs::path& out, int jobs, bool cold_start, bool timings) {
  const auto cfg = load(config_path);
  experiments::ExperimentOptions opts;
  opts.jobs = jobs;
  opts.cold_start = cold_start;
  opts.record_timing = timings;
  switch (cfg.kind) {
    case experiments::Kind::rate: {
      const auto records = experiments::run_rate_experiment(cfg, opts);
      experiments::write_outputs(records, experiments::format_rate_report(records, cfg.truth.n_states), out,
                                 cfg.truth.n_states);
      break;
    }
    case experiments::Kind::fixed_n: {
      const auto report = experiments::run_fixed_n_experiment(cfg, opts);
      io::write_text_file(out / "report.txt", experiments::format_report(report));
      io::write_text_file(out / "fit.json", io::params_to_json(report.fitted).dump(2) + "\n");
      break;
    }
    case experiments::Kind::diagnostics:
      experiments::write_diagnostics(experiments::run_diagnostics(cfg), out);
      break;
  }
  return 0;
}

int cmd_diagnose(const std::string& config_path, const fs::path& out) {
  const auto cfg = load(config_path);
  experiments::write_diagnostics(experiments::run_diagnostics(cfg), out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hidden Markov models with polynomial trends"};
  app.require_subcommand(1);

  std::string config;
  std::string data;
  std::string out;
  int jobs = 1;
  bool cold_start = false;
  bool timings = false;

  auto* sim = app.add_subcommand("simulate", "Simulate the configured true model");
  sim->add_option("--config", config, "Config file")->required()->check(CLI::ExistingFile);
  sim->add_option("--out", out, "Output directory")->required();

  auto* fit = app.add_subcommand("fit", "Fit a model to a trajectory CSV by EM");
  fit->add_option("--config", config, "Config file")->required()->check(CLI::ExistingFile);
  fit->add_option("--data", data, "Trajectory CSV (t,y[,x,b])")->required()->check(CLI::ExistingFile);
  fit->add_option("--out", out, "Output directory")->required();

  auto* exp = app.add_subcommand("experiment", "Run the configured experiment");
  exp->add_option("--config", config, "Config file")->required()->check(CLI::ExistingFile);
  exp->add_option("--out", out, "Output directory")->required();
  exp->add_option("--jobs", jobs, "Parallel replications")->check(CLI::PositiveNumber);
  exp->add_flag("--cold-start", cold_start, "Do not warm-start fits from the previous n");
  exp->add_flag("--timings", timings, "Record wall-clock time per fit (outputs are then not byte-stable)");

  auto* diag = app.add_subcommand("diagnose", "Block gap, tube, homogenization and forgetting diagnostics");
  diag->add_option("--config", config, "Config file")->required()->check(CLI::ExistingFile);
  diag->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*sim) return cmd_simulate(config, out);
    if (*fit) return cmd_fit(config, data, out);
    if (*exp) return cmd_experiment(config, out, jobs, cold_start, timings);
    if (*diag) return cmd_diagnose(config, out);
  } catch (const ValidationError& e) {
    std::cerr << "trendhmm: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "trendhmm: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
