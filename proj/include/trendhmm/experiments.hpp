#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "trendhmm/estimation.hpp"
#include "trendhmm/model.hpp"
#include "trendhmm/numerics.hpp"
#include "trendhmm/theory.hpp"

namespace trendhmm::experiments {

enum class Kind { rate, fixed_n, diagnostics };

struct DiagnosticsConfig {
  std::vector<int> segments{1, 2, 4, 8, 16};
  std::size_t forgetting_t = 50;
  int integrated_grid = 8;
  std::size_t mc_length = 0;  // 0: use max(n_values)
  bool fit = true;            // fit at max(n_values) for the tube report
};

struct ExperimentConfig {
  Kind kind = Kind::rate;
  ModelParams truth;
  std::vector<std::size_t> n_values;
  int n_replications = 1;
  FitConfig fit;
  std::filesystem::path output_dir;
  std::uint64_t master_seed = 0;
  DiagnosticsConfig diagnostics;

  void validate() const;
};

/// Parses a JSON config document. `source` names the document in messages.
/// Throws ValidationError for syntax errors (with line/column) and for
/// invalid fields (naming the field).
ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

struct ExperimentOptions {
  int jobs = 1;
  bool cold_start = false;
  bool record_timing = false;  // wall_time_s stays 0 unless set, keeping outputs byte-stable
};

/// Deterministic per-task seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0);

struct ErrorRecord {
  int replication = 0;
  std::size_t n = 0;
  std::vector<double> err_trend_sup;
  double err_q_frobenius = 0.0;
  double err_var_max = 0.0;
  double loglik = 0.0;
  double wall_time_s = 0.0;
  std::string status = "ok";

  bool ok() const { return status == "ok"; }
};

/// Error metrics of an estimate against the truth after align_states.
ErrorRecord evaluate_fit(const ModelParams& est, const ModelParams& truth, std::size_t n);

/// For each replication, one simulation of length max(n_values); fits on
/// every prefix n. Failed fits are recorded with a non-ok status.
std::vector<ErrorRecord> run_rate_experiment(const ExperimentConfig& config, const ExperimentOptions& options = {});

struct FixedNReport {
  std::size_t n = 0;
  ModelParams fitted;  // aligned to the truth's labels
  double loglik = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> trend_sup_errors;
  double err_q_frobenius = 0.0;
  double err_var_max = 0.0;
  theory::TubeReport tube;
  double block_gap = 0.0;
};

FixedNReport run_fixed_n_experiment(const ExperimentConfig& config, const ExperimentOptions& options = {});
std::string format_report(const FixedNReport& report);

struct SlopeRow {
  std::string metric;
  numerics::Line line;
  std::size_t n_points = 0;
};

/// OLS of log10(mean error over replications) on log10 n per metric.
/// Throws ValidationError when a metric has fewer than 2 usable points.
std::vector<SlopeRow> fit_slopes(const std::vector<ErrorRecord>& records);

std::vector<std::string> metric_names(int n_states);

void write_error_csv(std::ostream& out, const std::vector<ErrorRecord>& records, int n_states);
std::vector<ErrorRecord> read_error_csv(std::istream& in);

/// Median errors per n and fitted slopes, as plain text.
std::string format_rate_report(const std::vector<ErrorRecord>& records, int n_states);

/// errors.csv, slopes.csv, report.txt and plotdata_<metric>.csv.
void write_outputs(const std::vector<ErrorRecord>& records, const std::string& report,
                   const std::filesystem::path& output_dir, int n_states);

struct DiagnosticsReport {
  std::vector<std::pair<std::size_t, double>> block_gaps;  // (n, gap) at the truth
  std::optional<theory::TubeReport> tube;
  std::vector<std::pair<int, double>> homogenization_gaps;  // (N, gap)
  std::vector<double> forgetting;                           // t = 1..T
  double forgetting_rho = 0.0;
  double forgetting_c = 0.0;
  theory::McEstimate integrated;
  double normalized_loglik = 0.0;  // (1/n) l_n(truth)
  std::size_t n = 0;
};

DiagnosticsReport run_diagnostics(const ExperimentConfig& config);
void write_diagnostics(const DiagnosticsReport& report, const std::filesystem::path& output_dir);

}  // namespace trendhmm::experiments
