#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "trendhmm/model.hpp"
#include "trendhmm/numerics.hpp"

// Numerical counterparts of the objects used in the consistency argument for
// trend HMMs: tubes around the true trends, block-augmented likelihoods,
// de-trended observations, homogenized likelihoods and their Monte-Carlo
// limits, and exponential forgetting of the filter.
namespace trendhmm::theory {

/// Per true state x: sup over [0, n] of |T_est,perm[x] - T_truth,x|.
std::vector<double> sup_trend_error(const ModelParams& est, const ModelParams& truth,
                                    const numerics::Permutation& perm, std::int64_t n);

struct TubeReport {
  double M = 0.0;
  std::int64_t n = 0;
  bool cover_ok = false;        // every true trend has an estimated trend within M
  bool containment_ok = false;  // every estimated trend lies within M of a true trend
  Eigen::MatrixXd per_pair_sup;  // (true x, estimated x') sup distance on [0, n]
};

TubeReport tube_check(const ModelParams& est, const ModelParams& truth, double M, std::int64_t n);

/// Smallest M (bisection to `resolution`) for which both tube flags hold.
TubeReport minimal_tube(const ModelParams& est, const ModelParams& truth, std::int64_t n,
                        double resolution = 1e-3);

/// Block of the true model assigned to each state of a parameter: the block
/// whose reference trend is closest in sup-norm on [0, n].
struct BlockAssignment {
  std::vector<int> blockmap;
  std::vector<double> distance;
};

BlockAssignment assign_blocks(const ModelParams& params, const BlockStructure& truth_blocks, std::int64_t n);

/// D_x(u) = T_x(n u) - T_ref,b(n u) for a state x assigned to block b.
class ResidualTrend {
 public:
  /// Throws ValidationError when `bound` is given and sup_{[0,1]} |D| exceeds
  /// bound + max |Delta|.
  ResidualTrend(const ModelParams& params, int state, const BlockStructure& truth_blocks, int block,
                std::int64_t horizon, std::optional<double> bound = std::nullopt);

  int state() const noexcept { return state_; }
  int block() const noexcept { return block_; }
  std::int64_t horizon() const noexcept { return horizon_; }
  /// D at rescaled time u in [0, 1].
  double operator()(double u) const { return difference_(u * static_cast<double>(horizon_)); }
  double sup_norm() const;

 private:
  int state_;
  int block_;
  std::int64_t horizon_;
  TrendPoly difference_;
};

/// Z'_t = Y_t - T_ref,B_t(t). Throws ValidationError when blocks are missing.
Trajectory detrend(const Trajectory& traj, const BlockStructure& blocks);

/// log p((Y, B)_1^n): state x can emit at time t only when blockmap[x] = B_t.
/// -inf when some B_t has no compatible state.
double block_loglik(const ModelParams& params, const Trajectory& traj, std::span<const int> blockmap);

/// (1/n) |l_n - l_n^(Y,B)|; +inf when the block likelihood is -inf.
double block_gap(const ModelParams& params, const Trajectory& traj, std::span<const int> blockmap);

/// Block likelihood with residual trends frozen on N segments of length n/N.
/// For N >= n every segment holds at most one time step and the value equals
/// block_loglik.
double homogenized_loglik(const ModelParams& params, const Trajectory& traj, const BlockStructure& blocks,
                          std::span<const int> blockmap, int segments);
/// Same, with the blockmap from assign_blocks on the trajectory horizon.
double homogenized_loglik(const ModelParams& params, const Trajectory& traj, const BlockStructure& blocks,
                          int segments);

/// Homogeneous block HMM: transition, emission variances, emission means
/// (offsets) and the block emitted by each state.
struct HomogeneousParams {
  Eigen::MatrixXd transition;
  Eigen::VectorXd variances;
  Eigen::VectorXd offsets;
  std::vector<int> blockmap;

  int n_states() const noexcept { return static_cast<int>(transition.rows()); }
  void validate() const;
};

/// De-trended homogeneous process of the true parameter.
HomogeneousParams homogeneous_truth(const ModelParams& truth, const BlockStructure& blocks);

struct McEstimate {
  double value = 0.0;
  double std_error = 0.0;  // batch means over 20 batches
};

/// Monte-Carlo estimate of l^hom at `eval`: simulates (Z', B) of length m
/// from `truth` with a stationary start and returns (1/m) l_m^hom(eval).
McEstimate mc_homogeneous_loglik(const HomogeneousParams& truth, const HomogeneousParams& eval, std::size_t length,
                                 std::uint64_t seed);

/// Riemann sum over u = i / grid_n of l^hom at offsets D_x(u), on one common
/// simulated path of the true de-trended process.
McEstimate integrated_loglik(const ModelParams& params, const ModelParams& truth, const BlockStructure& blocks,
                             std::int64_t n, int grid_n, std::size_t mc_length, std::uint64_t seed);

/// L1 distance between P(X_t | Y_1^{t-1}, X_0 ~ mu) and the same with nu.
/// Requires params.sigma_minus > 0 and 1 <= t <= n.
double filter_forgetting_gap(const ModelParams& params, const Trajectory& traj, const Eigen::VectorXd& mu,
                             const Eigen::VectorXd& nu, std::size_t t);

/// Gap for every t = 1..t_max in one pass.
std::vector<double> filter_forgetting_curve(const ModelParams& params, const Trajectory& traj,
                                            const Eigen::VectorXd& mu, const Eigen::VectorXd& nu, std::size_t t_max);

/// rho = 1 - s / (1 - s) and C = 2 / (rho (1 - rho)^3) for s = sigma_minus.
struct ForgettingConstants {
  double rho;
  double c;
};
ForgettingConstants forgetting_constants(double sigma_minus);

}  // namespace trendhmm::theory
