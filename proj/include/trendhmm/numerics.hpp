#pragma once

#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace trendhmm::numerics {

/// log(sum(exp(values))) without overflow. Returns -inf for an all -inf input.
double log_sum_exp(std::span<const double> values);

/// Weighted least-squares problem: minimize sum_i w_i (y_i - design_i . beta)^2.
struct WlsProblem {
  Eigen::MatrixXd design;   // m x p
  Eigen::VectorXd targets;  // m
  Eigen::VectorXd weights;  // m, non-negative
};

/// Solves a WlsProblem by column-pivoted QR of the sqrt(w)-scaled design.
/// Throws SingularSystemError when the weighted design is rank deficient and
/// ValidationError on inconsistent dimensions or negative weights.
Eigen::VectorXd solve_wls(const WlsProblem& problem);

/// Same as above, without copying the design matrix.
Eigen::VectorXd solve_wls(const Eigen::Ref<const Eigen::MatrixXd>& design,
                          const Eigen::Ref<const Eigen::VectorXd>& targets,
                          const Eigen::Ref<const Eigen::VectorXd>& weights);

/// A permutation of {0..K-1}; perm[x] is the column matched to row x.
using Permutation = std::vector<int>;

/// Exhaustive search for the permutation minimizing sum_x cost(perm[x], x).
/// Ties resolve to the lexicographically smallest permutation. K <= 10.
Permutation best_permutation(const Eigen::MatrixXd& cost);

/// Lexicographic variant: minimizes the primary cost, then the secondary cost
/// among permutations whose primary value is within rel_tie of the optimum.
Permutation best_permutation(const Eigen::MatrixXd& primary, const Eigen::MatrixXd& secondary,
                             double rel_tie = 1e-9);

/// Value of a permutation under sum_x cost(perm[x], x).
double permutation_cost(const Eigen::MatrixXd& cost, const Permutation& perm);

struct Line {
  double slope;
  double intercept;
};

/// Ordinary least-squares line. Throws ValidationError when fewer than two
/// distinct abscissae are given.
Line fit_line(std::span<const double> xs, std::span<const double> ys);

}  // namespace trendhmm::numerics
