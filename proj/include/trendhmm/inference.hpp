#pragma once

#include <vector>

#include <Eigen/Dense>

#include "trendhmm/model.hpp"

namespace trendhmm {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Smoothing marginals from forward-backward.
struct Posteriors {
  RowMatrix gamma;          // n x K, gamma(t, x) = P(X_t = x | Y_1^n)
  std::vector<double> xi;   // (n-1) x K x K, flattened row-major
  int n_states = 0;
  double loglik = 0.0;

  std::size_t length() const noexcept { return static_cast<std::size_t>(gamma.rows()); }
  double xi_at(std::size_t t, int x, int y) const {
    return xi[(t * n_states + x) * n_states + y];
  }
  /// sum_t xi_t, the expected transition counts.
  Eigen::MatrixXd transition_counts() const;
};

/// Filtered state probabilities and the log-likelihood.
struct ForwardResult {
  double loglik = 0.0;
  RowMatrix log_filter;  // n x K, row t = log P(X_t | Y_1^t)
  std::vector<double> step_loglik;  // log p(Y_t | Y_1^{t-1}), when requested
};

/// log N(y; T_x(t), sigma_x^2) for every state x.
Eigen::VectorXd emission_logdensity(const ModelParams& params, double y, double t);

/// n x K matrix of emission log-densities along a trajectory.
RowMatrix emission_logdensities(const ModelParams& params, const Trajectory& traj);

/// Same, given the emission means already evaluated (n x K).
RowMatrix emission_logdensities(const RowMatrix& means, const Eigen::VectorXd& variances,
                                std::span<const double> observations);

/// Forward recursion in log scale with per-step normalization. Entries of
/// log_emission may be -inf (incompatible states); the likelihood is -inf
/// when some step has no compatible state.
ForwardResult forward(const RowMatrix& log_emission, const Eigen::VectorXd& initial_dist,
                      const Eigen::MatrixXd& transition, bool keep_filter = true, bool keep_steps = false);

/// Forward-backward smoothing on precomputed emission log-densities.
Posteriors forward_backward(const RowMatrix& log_emission, const Eigen::VectorXd& initial_dist,
                            const Eigen::MatrixXd& transition);

/// log p^theta(Y_1^n) and the filter.
ForwardResult log_forward(const ModelParams& params, const Trajectory& traj);

/// log of the exact sum over all K^n hidden paths. Throws SizeError when
/// K^n exceeds 1e7.
double brute_force_loglik(const ModelParams& params, const Trajectory& traj);

/// Smoothing posteriors gamma and xi with the log-likelihood.
Posteriors posterior(const ModelParams& params, const Trajectory& traj);

}  // namespace trendhmm
