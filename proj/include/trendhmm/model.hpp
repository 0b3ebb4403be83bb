#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace trendhmm {

/// Polynomial trend of one hidden state.
///
/// Stored in the shifted-Legendre basis P~_k(u) = P_k(2u - 1) over the rescaled
/// time u = t / n_scale. On [0, n_scale] the basis is orthogonal, which keeps
/// the trend regression well conditioned even when t reaches 1e5 at degree 4.
class TrendPoly {
 public:
  TrendPoly() = default;
  TrendPoly(std::vector<double> coefficients, std::int64_t n_scale);

  static TrendPoly constant(double value, std::int64_t n_scale, int degree_bound = 0);
  /// Builds a trend from monomial coefficients in t: a_0 + a_1 t + ... + a_d t^d.
  static TrendPoly from_monomial(std::span<const double> t_coefficients, std::int64_t n_scale);

  int degree_bound() const noexcept { return static_cast<int>(coefficients_.size()) - 1; }
  std::int64_t n_scale() const noexcept { return n_scale_; }
  const std::vector<double>& coefficients() const noexcept { return coefficients_; }

  /// T(t), by the Legendre three-term recurrence.
  double operator()(double t) const;

  /// Monomial coefficients in t.
  std::vector<double> to_monomial() const;
  /// Monomial coefficients in u = t / n_scale.
  std::vector<double> to_unit_monomial() const;

  /// Same function of t, expressed over a new rescaling horizon.
  TrendPoly rebased(std::int64_t n_scale) const;
  /// Same function with extra zero high-order coefficients (degree only grows).
  TrendPoly padded(int degree_bound) const;

  TrendPoly& operator+=(double c);

  friend bool operator==(const TrendPoly&, const TrendPoly&) = default;

 private:
  std::vector<double> coefficients_{0.0};
  std::int64_t n_scale_ = 1;
};

/// Values of P~_0(u) .. P~_d(u), written into out (size d + 1).
void shifted_legendre_basis(double u, std::span<double> out);

/// Coefficients of the polynomial T_a - T_b over horizon n, in the unit
/// monomial basis u = t / n, for degree max(d_a, d_b).
std::vector<double> difference_unit_monomial(const TrendPoly& a, const TrendPoly& b, std::int64_t n);

/// sup over t in [0, horizon] of |a(t) - b(t)|: dense grid plus the
/// stationary points of the difference polynomial.
double trend_sup_distance(const TrendPoly& a, const TrendPoly& b, std::int64_t horizon);

/// theta = (K, pi, Q, sigma^2, T) for Gaussian emissions translated by trends.
struct ModelParams {
  int n_states = 1;
  Eigen::VectorXd initial_dist;
  Eigen::MatrixXd transition;
  Eigen::VectorXd variances;
  std::vector<TrendPoly> trends;
  double sigma_minus = 0.0;

  /// Throws ValidationError naming the first violated invariant.
  void validate(double variance_floor = kVarianceFloor) const;

  /// Parameters with states relabeled: new state x is old state perm[x].
  ModelParams relabeled(std::span<const int> perm) const;

  /// Every trend re-expressed over horizon n (values of T(t) unchanged).
  ModelParams rebased(std::int64_t n) const;

  static constexpr double kVarianceFloor = 1e-8;
};

/// Uniform initial distribution of size k.
Eigen::VectorXd uniform_distribution(int k);

/// Stationary distribution of a row-stochastic matrix (left eigenvector for 1).
Eigen::VectorXd stationary_distribution(const Eigen::MatrixXd& transition);

/// Observations Y_1..Y_n with optional hidden states and block labels.
/// Index i holds time t = i + 1. States and blocks are zero-based in memory.
struct Trajectory {
  std::vector<double> observations;
  std::optional<std::vector<int>> hidden_states;
  std::optional<std::vector<int>> blocks;
  std::optional<std::uint64_t> seed;

  std::size_t length() const noexcept { return observations.size(); }

  /// First n time steps.
  Trajectory prefix(std::size_t n) const;
  void validate(std::optional<int> n_states = std::nullopt) const;
};

/// Partition of the states into classes of trends equal up to translation.
struct BlockStructure {
  std::vector<int> block_of_state;       // state -> block id
  std::vector<TrendPoly> reference_trend; // block id -> trend of minimal member
  std::vector<double> offsets;           // state -> Delta(x)
  double tolerance = 0.0;

  int n_blocks() const noexcept { return static_cast<int>(reference_trend.size()); }
  double max_abs_offset() const;
};

/// Evaluates T_x(t).
double eval_trend(const TrendPoly& trend, double t);

/// Samples (X, Y) of length n. Throws ValidationError for invalid params.
Trajectory simulate(const ModelParams& params, std::size_t n, std::uint64_t seed);

/// 256 equispaced times in [1, n].
std::vector<double> default_block_grid(std::size_t n);
/// 1e-6 * (1 + max |T_x| over grid).
double default_block_tolerance(const ModelParams& params, std::span<const double> grid);

/// Groups states whose trend difference stays within tolerance of its grid
/// mean. Offsets are the grid mean of T_x - T_ref. Throws
/// NonTransitiveBlocksError when the tolerance relation is not transitive.
BlockStructure compute_blocks(const ModelParams& params, double tolerance, std::span<const double> grid);
/// compute_blocks with the default grid and tolerance for horizon n.
BlockStructure compute_blocks(const ModelParams& params, std::size_t n);

/// Minimum distance between reference trends at time t; +inf for one block.
double block_separation(const BlockStructure& blocks, double t);

}  // namespace trendhmm
