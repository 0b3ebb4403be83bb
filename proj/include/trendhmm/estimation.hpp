#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "trendhmm/inference.hpp"
#include "trendhmm/model.hpp"
#include "trendhmm/numerics.hpp"

namespace trendhmm {

struct FitConfig {
  int n_states = 2;
  int degree_bound = 4;
  double sigma_minus = 0.0;
  int max_iters = 500;
  double rel_tol = 1e-8;
  int n_restarts = 10;
  std::uint64_t seed = 0;
  double variance_floor = ModelParams::kVarianceFloor;

  void validate() const;
};

struct FitResult {
  ModelParams params;
  std::vector<double> loglik_trace;     // winning restart, one entry per visited parameter
  std::vector<double> restart_logliks;  // final loglik per restart, -inf when it failed
  int iterations = 0;
  bool converged = false;
  int best_restart = 0;

  double loglik() const { return loglik_trace.back(); }
};

/// Shifted-Legendre design matrix (n x (degree + 1)) at t = 1..n, u = t / n.
Eigen::MatrixXd trend_design(std::size_t n, int degree_bound);

/// Deterministic starting point for restart `restart_index`. Throws
/// ValidationError when n < K (d + 2).
ModelParams initialize(const Trajectory& traj, const FitConfig& config, int restart_index);

/// Exact maximizer of the expected complete-data log-likelihood with pi held
/// uniform and Q projected on {Q >= sigma_minus}. Throws DegenerateStateError
/// when a state carries less than 10 (d + 1) posterior mass.
ModelParams m_step(const Trajectory& traj, const Posteriors& post, const FitConfig& config);

/// Expected complete-data log-likelihood E[log p(X, Y) | Y; post] at params.
double expected_complete_loglik(const ModelParams& params, const Trajectory& traj, const Posteriors& post);

/// Row-wise projection of transition counts onto stochastic rows with every
/// entry >= sigma_minus: clip low entries, share the rest proportionally.
Eigen::MatrixXd project_transition(const Eigen::MatrixXd& counts, double sigma_minus);

/// EM from one starting point.
FitResult run_em(const Trajectory& traj, const ModelParams& start, const FitConfig& config);

/// EM with config.n_restarts starts; the first restarts use `warm_starts`
/// (re-expressed on this trajectory's horizon) before falling back to
/// initialize(). The best final log-likelihood wins, ties to the lower index.
FitResult em_fit(const Trajectory& traj, const FitConfig& config,
                 std::span<const ModelParams> warm_starts = {});

/// perm[x] is the estimated state matched to true state x: minimizes the sum
/// of trend sup-distances on [0, horizon], variance distance breaking ties.
numerics::Permutation align_states(const ModelParams& est, const ModelParams& truth, std::int64_t horizon);

}  // namespace trendhmm
