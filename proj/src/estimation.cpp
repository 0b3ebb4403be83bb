#include "trendhmm/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "trendhmm/errors.hpp"

namespace trendhmm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

TrendPoly to_trend(const Eigen::VectorXd& beta, std::size_t n) {
  return TrendPoly(std::vector<double>(beta.data(), beta.data() + beta.size()), static_cast<std::int64_t>(n));
}

Eigen::VectorXd observations_vector(const Trajectory& traj) {
  return Eigen::Map<const Eigen::VectorXd>(traj.observations.data(), static_cast<Eigen::Index>(traj.length()));
}

ModelParams m_step_with_design(const Trajectory& traj, const Posteriors& post, const FitConfig& config,
                               const Eigen::MatrixXd& design) {
  const int k = config.n_states;
  const std::size_t n = traj.length();
  if (post.length() != n || post.n_states != k)
    throw ValidationError("m_step: posteriors do not match trajectory or n_states");
  const Eigen::VectorXd y = observations_vector(traj);
  const double min_mass = 10.0 * (config.degree_bound + 1);

  ModelParams out;
  out.n_states = k;
  out.sigma_minus = config.sigma_minus;
  out.initial_dist = uniform_distribution(k);
  out.variances.resize(k);
  out.trends.reserve(k);
  for (int x = 0; x < k; ++x) {
    const Eigen::VectorXd w = post.gamma.col(x);
    const double mass = w.sum();
    if (!(mass >= min_mass)) throw DegenerateStateError(x, mass);
    const Eigen::VectorXd beta = numerics::solve_wls(design, y, w);
    const Eigen::VectorXd resid = y - design * beta;
    const double var = w.dot(resid.cwiseProduct(resid)) / mass;
    out.variances[x] = std::max(var, config.variance_floor);
    out.trends.push_back(to_trend(beta, n));
  }
  out.transition = k == 1 ? Eigen::MatrixXd::Ones(1, 1) : project_transition(post.transition_counts(), config.sigma_minus);
  return out;
}

// Start supplied by the caller, made admissible for this fit.
ModelParams adapt_start(const ModelParams& start, const Trajectory& traj, const FitConfig& config) {
  if (start.n_states != config.n_states) throw ValidationError("warm start has the wrong number of states");
  ModelParams p = start.rebased(static_cast<std::int64_t>(traj.length()));
  for (auto& tr : p.trends) {
    if (tr.degree_bound() > config.degree_bound) throw ValidationError("warm start trend degree exceeds degree_bound");
    tr = tr.padded(config.degree_bound);
  }
  p.sigma_minus = config.sigma_minus;
  p.initial_dist = uniform_distribution(config.n_states);
  p.variances = p.variances.cwiseMax(config.variance_floor);
  if (config.n_states > 1) p.transition = project_transition(p.transition, config.sigma_minus);
  return p;
}

}  // namespace

void FitConfig::validate() const {
  if (n_states < 1) throw ValidationError("fit.n_states must be >= 1");
  if (degree_bound < 0) throw ValidationError("fit.degree_bound must be >= 0");
  if (!(sigma_minus >= 0.0) || sigma_minus > 1.0 / n_states) throw ValidationError("fit.sigma_minus must lie in [0, 1/K]");
  if (max_iters < 1) throw ValidationError("fit.max_iters must be >= 1");
  if (!(rel_tol > 0.0)) throw ValidationError("fit.rel_tol must be > 0");
  if (n_restarts < 1) throw ValidationError("fit.n_restarts must be >= 1");
  if (!(variance_floor > 0.0)) throw ValidationError("fit.variance_floor must be > 0");
}

Eigen::MatrixXd trend_design(std::size_t n, int degree_bound) {
  Eigen::MatrixXd design(static_cast<Eigen::Index>(n), degree_bound + 1);
  std::vector<double> row(static_cast<std::size_t>(degree_bound) + 1);
  for (std::size_t i = 0; i < n; ++i) {
    shifted_legendre_basis(static_cast<double>(i + 1) / static_cast<double>(n), row);
    for (int j = 0; j <= degree_bound; ++j) design(static_cast<Eigen::Index>(i), j) = row[j];
  }
  return design;
}

Eigen::MatrixXd project_transition(const Eigen::MatrixXd& counts, double sigma_minus) {
  const Eigen::Index k = counts.cols();
  Eigen::MatrixXd q(counts.rows(), k);
  for (Eigen::Index x = 0; x < counts.rows(); ++x) {
    std::vector<bool> clipped(static_cast<std::size_t>(k), false);
    // Clipping can push other entries below the bound, so iterate to a fixed point.
    while (true) {
      double free_mass = 0.0;
      Eigen::Index n_clipped = 0;
      for (Eigen::Index y = 0; y < k; ++y) {
        if (clipped[y])
          ++n_clipped;
        else
          free_mass += counts(x, y);
      }
      const double budget = 1.0 - static_cast<double>(n_clipped) * sigma_minus;
      const Eigen::Index n_free = k - n_clipped;
      bool changed = false;
      for (Eigen::Index y = 0; y < k; ++y) {
        if (clipped[y]) {
          q(x, y) = sigma_minus;
          continue;
        }
        q(x, y) = free_mass > 0.0 ? budget * counts(x, y) / free_mass : budget / static_cast<double>(n_free);
        if (q(x, y) < sigma_minus) {
          clipped[y] = true;
          changed = true;
        }
      }
      if (!changed) break;
    }
    // Rescale only the free entries so clipped ones stay exactly at the bound.
    double free_sum = 0.0, clipped_sum = 0.0;
    for (Eigen::Index y = 0; y < k; ++y) (clipped[y] ? clipped_sum : free_sum) += q(x, y);
    if (free_sum > 0.0)
      for (Eigen::Index y = 0; y < k; ++y)
        if (!clipped[y]) q(x, y) = std::max(sigma_minus, q(x, y) * (1.0 - clipped_sum) / free_sum);
  }
  return q;
}

ModelParams initialize(const Trajectory& traj, const FitConfig& config, int restart_index) {
  config.validate();
  const int k = config.n_states;
  const int d = config.degree_bound;
  const std::size_t n = traj.length();
  if (n < static_cast<std::size_t>(k) * static_cast<std::size_t>(d + 2)) {
    throw ValidationError("initialize: need at least K (d + 2) = " + std::to_string(k * (d + 2)) +
                          " observations, got " + std::to_string(n));
  }
  const Eigen::MatrixXd design = trend_design(n, d);
  const Eigen::VectorXd y = observations_vector(traj);
  const Eigen::VectorXd pooled = numerics::solve_wls(design, y, Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n)));
  const Eigen::VectorXd resid = y - design * pooled;
  const double pooled_var = resid.squaredNorm() / static_cast<double>(n);

  ModelParams p;
  p.n_states = k;
  p.sigma_minus = config.sigma_minus;
  p.initial_dist = uniform_distribution(k);
  p.variances.resize(k);

  if (k == 1) {
    p.trends.push_back(to_trend(pooled, n));
    p.variances[0] = std::max(pooled_var, config.variance_floor);
    p.transition = Eigen::MatrixXd::Ones(1, 1);
    return p;
  }

  // Quantile bands of the pooled residuals.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return resid[a] < resid[b]; });
  std::vector<Eigen::VectorXd> member(k, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n)));
  for (std::size_t r = 0; r < n; ++r) {
    const auto band = static_cast<int>(r * static_cast<std::size_t>(k) / n);
    member[band][static_cast<Eigen::Index>(order[r])] = 1.0;
  }

  std::mt19937_64 rng(splitmix64(config.seed ^ splitmix64(static_cast<std::uint64_t>(restart_index))));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sd = std::sqrt(pooled_var);

  for (int x = 0; x < k; ++x) {
    Eigen::VectorXd beta;
    try {
      beta = numerics::solve_wls(design, y, member[x]);
    } catch (const SingularSystemError&) {
      beta = pooled;
      const double mean_resid = member[x].dot(resid) / member[x].sum();
      beta[0] += mean_resid;
    }
    const Eigen::VectorXd r = y - design * beta;
    const double var = member[x].dot(r.cwiseProduct(r)) / member[x].sum();
    if (restart_index > 0) {
      // Wide enough to leave the basin of crossing-trend solutions.
      beta[0] += 1.5 * sd * normal(rng);
      for (int j = 1; j <= d; ++j) beta[j] += sd * normal(rng);
    }
    p.trends.push_back(to_trend(beta, n));
    p.variances[x] = std::max(var, config.variance_floor);
  }

  const double off = std::min(std::max(config.sigma_minus, 0.1), 1.0 / k);
  p.transition = Eigen::MatrixXd::Constant(k, k, off);
  p.transition.diagonal().setConstant(1.0 - (k - 1) * off);
  return p;
}

ModelParams m_step(const Trajectory& traj, const Posteriors& post, const FitConfig& config) {
  config.validate();
  return m_step_with_design(traj, post, config, trend_design(traj.length(), config.degree_bound));
}

double expected_complete_loglik(const ModelParams& params, const Trajectory& traj, const Posteriors& post) {
  const RowMatrix log_em = emission_logdensities(params, traj);
  const int k = params.n_states;
  double total = 0.0;
  for (int x = 0; x < k; ++x) {
    if (post.gamma(0, x) > 0.0) total += post.gamma(0, x) * std::log(params.initial_dist[x]);
  }
  for (Eigen::Index t = 0; t < log_em.rows(); ++t)
    for (int x = 0; x < k; ++x) total += post.gamma(t, x) * log_em(t, x);
  const Eigen::MatrixXd counts = post.transition_counts();
  for (int x = 0; x < k; ++x)
    for (int y = 0; y < k; ++y)
      if (counts(x, y) > 0.0) total += counts(x, y) * std::log(params.transition(x, y));
  return total;
}

FitResult run_em(const Trajectory& traj, const ModelParams& start, const FitConfig& config) {
  config.validate();
  const std::size_t n = traj.length();
  const Eigen::MatrixXd design = trend_design(n, config.degree_bound);
  const Eigen::VectorXd y = observations_vector(traj);

  auto e_step = [&](const ModelParams& p) {
    RowMatrix means(static_cast<Eigen::Index>(n), p.n_states);
    for (int x = 0; x < p.n_states; ++x) {
      const auto& c = p.trends[x].coefficients();
      means.col(x) = design * Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
    }
    return forward_backward(emission_logdensities(means, p.variances, traj.observations), p.initial_dist,
                            p.transition);
  };

  FitResult result;
  result.params = adapt_start(start, traj, config);
  Posteriors post = e_step(result.params);
  result.loglik_trace.push_back(post.loglik);
  for (int it = 1; it <= config.max_iters; ++it) {
    ModelParams next = m_step_with_design(traj, post, config, design);
    Posteriors next_post = e_step(next);
    const double prev = post.loglik;
    const double cur = next_post.loglik;
    result.params = std::move(next);
    post = std::move(next_post);
    result.loglik_trace.push_back(cur);
    result.iterations = it;
    if (std::abs(cur - prev) / (1.0 + std::abs(cur)) < config.rel_tol) {
      result.converged = true;
      break;
    }
  }
  result.restart_logliks = {result.loglik()};
  return result;
}

FitResult em_fit(const Trajectory& traj, const FitConfig& config, std::span<const ModelParams> warm_starts) {
  config.validate();
  std::vector<FitResult> runs;
  std::vector<double> finals;
  std::ostringstream failures;
  int best = -1;
  for (int r = 0; r < config.n_restarts; ++r) {
    try {
      const ModelParams start = static_cast<std::size_t>(r) < warm_starts.size()
                                    ? warm_starts[static_cast<std::size_t>(r)]
                                    : initialize(traj, config, r);
      FitResult run = run_em(traj, start, config);
      finals.push_back(run.loglik());
      if (best < 0 || run.loglik() > runs[static_cast<std::size_t>(best)].loglik()) best = static_cast<int>(runs.size());
      runs.push_back(std::move(run));
      runs.back().best_restart = r;
    } catch (const DegenerateStateError& e) {
      finals.push_back(kNegInf);
      runs.emplace_back();
      failures << " [restart " << r << ": " << e.what() << "]";
    } catch (const SingularSystemError& e) {
      finals.push_back(kNegInf);
      runs.emplace_back();
      failures << " [restart " << r << ": " << e.what() << "]";
    }
  }
  if (best < 0) throw FitFailedError("em_fit: all restarts failed:" + failures.str());
  FitResult out = std::move(runs[static_cast<std::size_t>(best)]);
  out.restart_logliks = std::move(finals);
  return out;
}

numerics::Permutation align_states(const ModelParams& est, const ModelParams& truth, std::int64_t horizon) {
  if (est.n_states != truth.n_states) throw ValidationError("align_states: state counts differ");
  const int k = est.n_states;
  Eigen::MatrixXd trend_cost(k, k);
  Eigen::MatrixXd var_cost(k, k);
  for (int i = 0; i < k; ++i) {
    for (int x = 0; x < k; ++x) {
      trend_cost(i, x) = trend_sup_distance(est.trends[i], truth.trends[x], horizon);
      var_cost(i, x) = std::abs(est.variances[i] - truth.variances[x]);
    }
  }
  return numerics::best_permutation(trend_cost, var_cost);
}

}  // namespace trendhmm
