#include "trendhmm/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "trendhmm/errors.hpp"
#include "trendhmm/inference.hpp"

namespace trendhmm::theory {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr int kBatches = 20;

void require_blocks(const Trajectory& traj, const char* what) {
  if (!traj.blocks) throw ValidationError(std::string(what) + ": trajectory has no block labels");
}

void check_blockmap(std::span<const int> blockmap, int n_states) {
  if (blockmap.size() != static_cast<std::size_t>(n_states))
    throw ValidationError("blockmap must assign a block to every state");
}

// Emission log-densities with state x masked to -inf when its block differs
// from the observed label. means(t, x) is the emission mean.
RowMatrix masked_emissions(const RowMatrix& means, const Eigen::VectorXd& variances,
                           std::span<const double> observations, std::span<const int> labels,
                           std::span<const int> blockmap) {
  RowMatrix log_em = emission_logdensities(means, variances, observations);
  for (Eigen::Index t = 0; t < log_em.rows(); ++t)
    for (Eigen::Index x = 0; x < log_em.cols(); ++x)
      if (blockmap[static_cast<std::size_t>(x)] != labels[static_cast<std::size_t>(t)]) log_em(t, x) = kNegInf;
  return log_em;
}

RowMatrix trend_means(const ModelParams& params, std::size_t n) {
  RowMatrix means(static_cast<Eigen::Index>(n), params.n_states);
  for (std::size_t i = 0; i < n; ++i)
    for (int x = 0; x < params.n_states; ++x)
      means(static_cast<Eigen::Index>(i), x) = params.trends[x](static_cast<double>(i + 1));
  return means;
}

// Mean and batch-means standard error of per-step values.
McEstimate batch_mean_estimate(const std::vector<double>& steps) {
  McEstimate out;
  const std::size_t m = steps.size();
  double total = 0.0;
  for (double v : steps) total += v;
  out.value = total / static_cast<double>(m);
  if (m < static_cast<std::size_t>(kBatches) || !std::isfinite(out.value)) {
    out.std_error = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  const std::size_t size = m / kBatches;
  std::vector<double> means(kBatches, 0.0);
  for (int b = 0; b < kBatches; ++b) {
    const std::size_t lo = b * size;
    const std::size_t hi = (b == kBatches - 1) ? m : lo + size;
    for (std::size_t i = lo; i < hi; ++i) means[b] += steps[i];
    means[b] /= static_cast<double>(hi - lo);
  }
  double mean = 0.0;
  for (double v : means) mean += v;
  mean /= kBatches;
  double var = 0.0;
  for (double v : means) var += (v - mean) * (v - mean);
  var /= (kBatches - 1);
  out.std_error = std::sqrt(var / kBatches);
  return out;
}

struct HomogeneousPath {
  std::vector<double> values;  // Z'
  std::vector<int> labels;     // B
};

HomogeneousPath simulate_homogeneous(const HomogeneousParams& truth, std::size_t length, std::uint64_t seed) {
  const int k = truth.n_states();
  const Eigen::VectorXd stationary = stationary_distribution(truth.transition);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](auto&& prob) {
    const double u = unif(rng);
    double acc = 0.0;
    for (int x = 0; x < k - 1; ++x) {
      acc += prob(x);
      if (u < acc) return x;
    }
    return k - 1;
  };
  HomogeneousPath path;
  path.values.resize(length);
  path.labels.resize(length);
  int x = draw([&](int i) { return stationary[i]; });
  for (std::size_t t = 0; t < length; ++t) {
    if (t > 0) {
      const int prev = x;
      x = draw([&](int j) { return truth.transition(prev, j); });
    }
    path.values[t] = truth.offsets[x] + std::sqrt(truth.variances[x]) * normal(rng);
    path.labels[t] = truth.blockmap[static_cast<std::size_t>(x)];
  }
  return path;
}

std::vector<double> homogeneous_steps(const HomogeneousParams& eval, const HomogeneousPath& path) {
  const int k = eval.n_states();
  const auto m = static_cast<Eigen::Index>(path.values.size());
  RowMatrix means(m, k);
  for (Eigen::Index t = 0; t < m; ++t) means.row(t) = eval.offsets.transpose();
  const RowMatrix log_em = masked_emissions(means, eval.variances, path.values, path.labels, eval.blockmap);
  ForwardResult fwd = forward(log_em, uniform_distribution(k), eval.transition, false, true);
  if (fwd.loglik == kNegInf) return std::vector<double>(path.values.size(), kNegInf);
  return std::move(fwd.step_loglik);
}

}  // namespace

std::vector<double> sup_trend_error(const ModelParams& est, const ModelParams& truth,
                                    const numerics::Permutation& perm, std::int64_t n) {
  if (est.n_states != truth.n_states || perm.size() != static_cast<std::size_t>(truth.n_states))
    throw ValidationError("sup_trend_error: state counts differ");
  std::vector<double> out(perm.size());
  for (std::size_t x = 0; x < perm.size(); ++x)
    out[x] = trend_sup_distance(est.trends[static_cast<std::size_t>(perm[x])], truth.trends[x], n);
  return out;
}

TubeReport tube_check(const ModelParams& est, const ModelParams& truth, double M, std::int64_t n) {
  if (!(M > 0.0)) throw ValidationError("tube_check: M must be > 0");
  TubeReport r;
  r.M = M;
  r.n = n;
  r.per_pair_sup.resize(truth.n_states, est.n_states);
  for (int x = 0; x < truth.n_states; ++x)
    for (int y = 0; y < est.n_states; ++y) r.per_pair_sup(x, y) = trend_sup_distance(est.trends[y], truth.trends[x], n);
  r.cover_ok = (r.per_pair_sup.rowwise().minCoeff().array() <= M).all();
  r.containment_ok = (r.per_pair_sup.colwise().minCoeff().array() <= M).all();
  return r;
}

TubeReport minimal_tube(const ModelParams& est, const ModelParams& truth, std::int64_t n, double resolution) {
  auto ok = [&](const TubeReport& r) { return r.cover_ok && r.containment_ok; };
  double hi = 1.0;
  TubeReport at_hi = tube_check(est, truth, hi, n);
  while (!ok(at_hi)) {
    hi *= 2.0;
    at_hi = tube_check(est, truth, hi, n);
  }
  double lo = 0.0;
  while (hi - lo > resolution) {
    const double mid = 0.5 * (lo + hi);
    TubeReport r = tube_check(est, truth, mid, n);
    if (ok(r)) {
      hi = mid;
      at_hi = std::move(r);
    } else {
      lo = mid;
    }
  }
  return at_hi;
}

BlockAssignment assign_blocks(const ModelParams& params, const BlockStructure& truth_blocks, std::int64_t n) {
  BlockAssignment out;
  out.blockmap.resize(params.n_states);
  out.distance.resize(params.n_states);
  for (int x = 0; x < params.n_states; ++x) {
    double best = std::numeric_limits<double>::infinity();
    int best_b = 0;
    for (int b = 0; b < truth_blocks.n_blocks(); ++b) {
      const double d = trend_sup_distance(params.trends[x], truth_blocks.reference_trend[b], n);
      if (d < best) {
        best = d;
        best_b = b;
      }
    }
    out.blockmap[x] = best_b;
    out.distance[x] = best;
  }
  return out;
}

ResidualTrend::ResidualTrend(const ModelParams& params, int state, const BlockStructure& truth_blocks, int block,
                             std::int64_t horizon, std::optional<double> bound)
    : state_(state), block_(block), horizon_(horizon) {
  if (horizon <= 0) throw ValidationError("ResidualTrend: horizon must be positive");
  if (block < 0 || block >= truth_blocks.n_blocks()) throw ValidationError("ResidualTrend: unknown block");
  const TrendPoly& tr = params.trends.at(static_cast<std::size_t>(state));
  const TrendPoly& ref = truth_blocks.reference_trend[static_cast<std::size_t>(block)];
  const int d = std::max(tr.degree_bound(), ref.degree_bound());
  const auto a = tr.rebased(horizon).padded(d).coefficients();
  const auto b = ref.rebased(horizon).padded(d).coefficients();
  std::vector<double> c(a.size());
  for (std::size_t j = 0; j < c.size(); ++j) c[j] = a[j] - b[j];
  difference_ = TrendPoly(std::move(c), horizon);
  if (bound) {
    const double limit = *bound + truth_blocks.max_abs_offset();
    if (sup_norm() > limit)
      throw ValidationError("residual trend of state " + std::to_string(state + 1) + " exceeds M + |Delta|");
  }
}

double ResidualTrend::sup_norm() const {
  return trend_sup_distance(difference_, TrendPoly::constant(0.0, horizon_), horizon_);
}

Trajectory detrend(const Trajectory& traj, const BlockStructure& blocks) {
  require_blocks(traj, "detrend");
  Trajectory out = traj;
  const auto& labels = *traj.blocks;
  for (std::size_t i = 0; i < traj.length(); ++i) {
    const int b = labels[i];
    if (b < 0 || b >= blocks.n_blocks()) throw ValidationError("detrend: block label out of range");
    out.observations[i] = traj.observations[i] - blocks.reference_trend[static_cast<std::size_t>(b)](static_cast<double>(i + 1));
  }
  return out;
}

double block_loglik(const ModelParams& params, const Trajectory& traj, std::span<const int> blockmap) {
  require_blocks(traj, "block_loglik");
  check_blockmap(blockmap, params.n_states);
  if (traj.length() == 0) throw ValidationError("block_loglik: empty trajectory");
  const RowMatrix log_em =
      masked_emissions(trend_means(params, traj.length()), params.variances, traj.observations, *traj.blocks, blockmap);
  return forward(log_em, params.initial_dist, params.transition, false).loglik;
}

double block_gap(const ModelParams& params, const Trajectory& traj, std::span<const int> blockmap) {
  const double with_blocks = block_loglik(params, traj, blockmap);
  if (with_blocks == kNegInf) return std::numeric_limits<double>::infinity();
  const double plain = log_forward(params, traj).loglik;
  return std::abs(plain - with_blocks) / static_cast<double>(traj.length());
}

double homogenized_loglik(const ModelParams& params, const Trajectory& traj, const BlockStructure& blocks,
                          std::span<const int> blockmap, int segments) {
  if (segments < 1) throw ValidationError("homogenized_loglik: need at least one segment");
  require_blocks(traj, "homogenized_loglik");
  check_blockmap(blockmap, params.n_states);
  const std::size_t n = traj.length();
  if (static_cast<std::size_t>(segments) >= n) return block_loglik(params, traj, blockmap);

  const auto seg = static_cast<std::int64_t>(segments);
  const auto horizon = static_cast<std::int64_t>(n);
  RowMatrix means(static_cast<Eigen::Index>(n), params.n_states);
  for (std::size_t i = 0; i < n; ++i) {
    const auto t = static_cast<std::int64_t>(i + 1);
    // Residual trends are read at the left end of the segment holding t:
    // s = n * floor(t N / n) / N.
    const double s = static_cast<double>((t * seg / horizon) * horizon) / static_cast<double>(seg);
    for (int x = 0; x < params.n_states; ++x) {
      const TrendPoly& ref = blocks.reference_trend.at(static_cast<std::size_t>(blockmap[static_cast<std::size_t>(x)]));
      const double residual = params.trends[x](s) - ref(s);
      means(static_cast<Eigen::Index>(i), x) = ref(static_cast<double>(t)) + residual;
    }
  }
  const RowMatrix log_em = masked_emissions(means, params.variances, traj.observations, *traj.blocks, blockmap);
  return forward(log_em, params.initial_dist, params.transition, false).loglik;
}

double homogenized_loglik(const ModelParams& params, const Trajectory& traj, const BlockStructure& blocks,
                          int segments) {
  const auto assignment = assign_blocks(params, blocks, static_cast<std::int64_t>(traj.length()));
  return homogenized_loglik(params, traj, blocks, assignment.blockmap, segments);
}

void HomogeneousParams::validate() const {
  const Eigen::Index k = transition.rows();
  if (k < 1 || transition.cols() != k) throw ValidationError("homogeneous transition must be square");
  if (variances.size() != k || offsets.size() != k || blockmap.size() != static_cast<std::size_t>(k))
    throw ValidationError("homogeneous parameters have inconsistent sizes");
  for (Eigen::Index x = 0; x < k; ++x) {
    if (std::abs(transition.row(x).sum() - 1.0) > 1e-12 || transition.row(x).minCoeff() < 0.0)
      throw ValidationError("homogeneous transition rows must be probability vectors");
    if (!(variances[x] > 0.0)) throw ValidationError("homogeneous variances must be positive");
  }
}

HomogeneousParams homogeneous_truth(const ModelParams& truth, const BlockStructure& blocks) {
  HomogeneousParams h;
  h.transition = truth.transition;
  h.variances = truth.variances;
  h.offsets = Eigen::Map<const Eigen::VectorXd>(blocks.offsets.data(), static_cast<Eigen::Index>(blocks.offsets.size()));
  h.blockmap = blocks.block_of_state;
  return h;
}

McEstimate mc_homogeneous_loglik(const HomogeneousParams& truth, const HomogeneousParams& eval, std::size_t length,
                                 std::uint64_t seed) {
  if (length < 1) throw ValidationError("mc_homogeneous_loglik: length must be >= 1");
  truth.validate();
  eval.validate();
  const HomogeneousPath path = simulate_homogeneous(truth, length, seed);
  return batch_mean_estimate(homogeneous_steps(eval, path));
}

McEstimate integrated_loglik(const ModelParams& params, const ModelParams& truth, const BlockStructure& blocks,
                             std::int64_t n, int grid_n, std::size_t mc_length, std::uint64_t seed) {
  if (grid_n < 1) throw ValidationError("integrated_loglik: grid_n must be >= 1");
  if (mc_length < 1) throw ValidationError("integrated_loglik: mc_length must be >= 1");
  const HomogeneousParams truth_h = homogeneous_truth(truth, blocks);
  truth_h.validate();
  const HomogeneousPath path = simulate_homogeneous(truth_h, mc_length, seed);

  const BlockAssignment assignment = assign_blocks(params, blocks, n);
  std::vector<ResidualTrend> residuals;
  for (int x = 0; x < params.n_states; ++x) residuals.emplace_back(params, x, blocks, assignment.blockmap[x], n);

  HomogeneousParams eval;
  eval.transition = params.transition;
  eval.variances = params.variances;
  eval.blockmap = assignment.blockmap;
  eval.offsets.resize(params.n_states);

  std::vector<double> averaged(mc_length, 0.0);
  for (int i = 0; i < grid_n; ++i) {
    const double u = static_cast<double>(i) / grid_n;
    for (int x = 0; x < params.n_states; ++x) eval.offsets[x] = residuals[static_cast<std::size_t>(x)](u);
    const std::vector<double> steps = homogeneous_steps(eval, path);
    for (std::size_t t = 0; t < mc_length; ++t) averaged[t] += steps[t] / grid_n;
  }
  return batch_mean_estimate(averaged);
}

ForgettingConstants forgetting_constants(double sigma_minus) {
  if (!(sigma_minus > 0.0) || !(sigma_minus < 0.5))
    throw ValidationError("forgetting bound needs 0 < sigma_minus < 1/2");
  const double rho = 1.0 - sigma_minus / (1.0 - sigma_minus);
  return {rho, 2.0 / (rho * std::pow(1.0 - rho, 3))};
}

std::vector<double> filter_forgetting_curve(const ModelParams& params, const Trajectory& traj,
                                            const Eigen::VectorXd& mu, const Eigen::VectorXd& nu, std::size_t t_max) {
  if (!(params.sigma_minus > 0.0)) throw ValidationError("filter_forgetting_gap: sigma_minus must be > 0");
  if (t_max < 1 || t_max > traj.length()) throw ValidationError("filter_forgetting_gap: need 1 <= t <= n");
  const int k = params.n_states;
  if (mu.size() != k || nu.size() != k) throw ValidationError("filter_forgetting_gap: initial laws must have K entries");

  const Eigen::MatrixXd qt = params.transition.transpose();
  // Predictive laws of X_t given Y_1^{t-1}, started from X_0 ~ mu or nu.
  Eigen::VectorXd a = qt * mu;
  Eigen::VectorXd b = qt * nu;
  std::vector<double> gaps;
  gaps.reserve(t_max);
  for (std::size_t t = 1; t <= t_max; ++t) {
    gaps.push_back((a - b).cwiseAbs().sum());
    if (t == t_max) break;
    const Eigen::VectorXd log_em = emission_logdensity(params, traj.observations[t - 1], static_cast<double>(t));
    const double top = log_em.maxCoeff();
    const Eigen::VectorXd e = (log_em.array() - top).exp();
    Eigen::VectorXd fa = a.cwiseProduct(e);
    Eigen::VectorXd fb = b.cwiseProduct(e);
    fa /= fa.sum();
    fb /= fb.sum();
    a = qt * fa;
    b = qt * fb;
  }
  return gaps;
}

double filter_forgetting_gap(const ModelParams& params, const Trajectory& traj, const Eigen::VectorXd& mu,
                             const Eigen::VectorXd& nu, std::size_t t) {
  return filter_forgetting_curve(params, traj, mu, nu, t).back();
}

}  // namespace trendhmm::theory
