#include "trendhmm/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "trendhmm/errors.hpp"

namespace trendhmm::numerics {

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw ValidationError("log_sum_exp: empty input");
  const double top = *std::max_element(values.begin(), values.end());
  if (top == -std::numeric_limits<double>::infinity()) return top;
  if (std::isinf(top)) return top;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - top);
  return top + std::log(acc);
}

Eigen::VectorXd solve_wls(const WlsProblem& problem) {
  return solve_wls(problem.design, problem.targets, problem.weights);
}

Eigen::VectorXd solve_wls(const Eigen::Ref<const Eigen::MatrixXd>& design,
                          const Eigen::Ref<const Eigen::VectorXd>& targets,
                          const Eigen::Ref<const Eigen::VectorXd>& weights) {
  const Eigen::Index m = design.rows();
  const Eigen::Index p = design.cols();
  if (targets.size() != m || weights.size() != m) {
    throw ValidationError("solve_wls: design has " + std::to_string(m) + " rows but targets/weights have " +
                          std::to_string(targets.size()) + "/" + std::to_string(weights.size()));
  }
  if ((weights.array() < 0.0).any()) throw ValidationError("solve_wls: negative weight");

  const Eigen::VectorXd root_w = weights.array().sqrt();
  const Eigen::MatrixXd scaled = root_w.asDiagonal() * design;
  const Eigen::VectorXd rhs = root_w.cwiseProduct(targets);

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(scaled);
  qr.setThreshold(1e-12);
  const auto rank = qr.rank();
  if (rank < p) throw SingularSystemError(static_cast<int>(rank), static_cast<int>(p));
  return qr.solve(rhs);
}

double permutation_cost(const Eigen::MatrixXd& cost, const Permutation& perm) {
  double total = 0.0;
  for (std::size_t x = 0; x < perm.size(); ++x) total += cost(perm[x], static_cast<Eigen::Index>(x));
  return total;
}

namespace {

void check_square(const Eigen::MatrixXd& m, const char* what) {
  if (m.rows() != m.cols()) throw ValidationError(std::string(what) + ": cost matrix must be square");
  if (m.rows() > 10) throw SizeError(std::string(what) + ": exhaustive search limited to K <= 10");
}

}  // namespace

Permutation best_permutation(const Eigen::MatrixXd& cost) {
  check_square(cost, "best_permutation");
  Permutation perm(static_cast<std::size_t>(cost.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  Permutation best = perm;
  double best_value = std::numeric_limits<double>::infinity();
  // next_permutation walks lexicographic order, so strict improvement keeps
  // the smallest permutation among ties.
  do {
    const double value = permutation_cost(cost, perm);
    if (value < best_value) {
      best_value = value;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Permutation best_permutation(const Eigen::MatrixXd& primary, const Eigen::MatrixXd& secondary,
                             double rel_tie) {
  check_square(primary, "best_permutation");
  if (secondary.rows() != primary.rows() || secondary.cols() != primary.cols()) {
    throw ValidationError("best_permutation: primary and secondary cost shapes differ");
  }
  const Permutation first = best_permutation(primary);
  const double optimum = permutation_cost(primary, first);
  const double slack = rel_tie * (1.0 + std::abs(optimum));

  Permutation perm(first.size());
  std::iota(perm.begin(), perm.end(), 0);
  Permutation best = first;
  double best_secondary = permutation_cost(secondary, first);
  do {
    if (permutation_cost(primary, perm) <= optimum + slack) {
      const double value = permutation_cost(secondary, perm);
      if (value < best_secondary) {
        best_secondary = value;
        best = perm;
      }
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Line fit_line(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ValidationError("fit_line: xs and ys differ in length");
  if (xs.size() < 2) throw ValidationError("fit_line: need at least two points");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  if (!(sxx > 0.0)) throw ValidationError("fit_line: abscissae are not distinct");
  const double slope = sxy / sxx;
  return {slope, my - slope * mx};
}

}  // namespace trendhmm::numerics
