#include "trendhmm/inference.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "trendhmm/errors.hpp"
#include "trendhmm/numerics.hpp"

namespace trendhmm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
const double kLog2Pi = std::log(2.0 * std::numbers::pi);

double gaussian_logpdf(double residual, double variance) {
  return -0.5 * (kLog2Pi + std::log(variance)) - residual * residual / (2.0 * variance);
}

}  // namespace

Eigen::MatrixXd Posteriors::transition_counts() const {
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(n_states, n_states);
  const std::size_t steps = length() > 0 ? length() - 1 : 0;
  for (std::size_t t = 0; t < steps; ++t)
    for (int x = 0; x < n_states; ++x)
      for (int y = 0; y < n_states; ++y) counts(x, y) += xi_at(t, x, y);
  return counts;
}

Eigen::VectorXd emission_logdensity(const ModelParams& params, double y, double t) {
  Eigen::VectorXd out(params.n_states);
  for (int x = 0; x < params.n_states; ++x) out[x] = gaussian_logpdf(y - params.trends[x](t), params.variances[x]);
  return out;
}

RowMatrix emission_logdensities(const RowMatrix& means, const Eigen::VectorXd& variances,
                                std::span<const double> observations) {
  const auto n = static_cast<Eigen::Index>(observations.size());
  const Eigen::Index k = means.cols();
  RowMatrix out(n, k);
  Eigen::VectorXd norm(k);
  Eigen::VectorXd inv2(k);
  for (Eigen::Index x = 0; x < k; ++x) {
    norm[x] = -0.5 * (kLog2Pi + std::log(variances[x]));
    inv2[x] = 1.0 / (2.0 * variances[x]);
  }
  for (Eigen::Index t = 0; t < n; ++t) {
    for (Eigen::Index x = 0; x < k; ++x) {
      const double r = observations[t] - means(t, x);
      out(t, x) = norm[x] - r * r * inv2[x];
    }
  }
  return out;
}

RowMatrix emission_logdensities(const ModelParams& params, const Trajectory& traj) {
  const auto n = static_cast<Eigen::Index>(traj.length());
  RowMatrix means(n, params.n_states);
  for (Eigen::Index t = 0; t < n; ++t)
    for (int x = 0; x < params.n_states; ++x) means(t, x) = params.trends[x](static_cast<double>(t + 1));
  return emission_logdensities(means, params.variances, traj.observations);
}

ForwardResult forward(const RowMatrix& log_emission, const Eigen::VectorXd& initial_dist,
                      const Eigen::MatrixXd& transition, bool keep_filter, bool keep_steps) {
  const Eigen::Index n = log_emission.rows();
  const Eigen::Index k = log_emission.cols();
  ForwardResult out;
  if (keep_filter) out.log_filter.resize(n, k);
  if (keep_steps) out.step_loglik.reserve(static_cast<std::size_t>(n));

  Eigen::VectorXd filter = initial_dist;
  Eigen::VectorXd pred(k);
  Eigen::VectorXd w(k);
  double loglik = 0.0;
  for (Eigen::Index t = 0; t < n; ++t) {
    if (t == 0) {
      pred = initial_dist;
    } else {
      pred.noalias() = transition.transpose() * filter;
    }
    const double top = log_emission.row(t).maxCoeff();
    if (top == kNegInf) {
      out.loglik = kNegInf;
      if (keep_filter) out.log_filter.bottomRows(n - t).setConstant(std::numeric_limits<double>::quiet_NaN());
      return out;
    }
    double s = 0.0;
    for (Eigen::Index x = 0; x < k; ++x) {
      w[x] = pred[x] * std::exp(log_emission(t, x) - top);
      s += w[x];
    }
    if (!(s > 0.0)) {
      out.loglik = kNegInf;
      if (keep_filter) out.log_filter.bottomRows(n - t).setConstant(std::numeric_limits<double>::quiet_NaN());
      return out;
    }
    loglik += top + std::log(s);
    if (keep_steps) out.step_loglik.push_back(top + std::log(s));
    filter = w / s;
    if (keep_filter)
      for (Eigen::Index x = 0; x < k; ++x) out.log_filter(t, x) = std::log(filter[x]);
  }
  out.loglik = loglik;
  return out;
}

Posteriors forward_backward(const RowMatrix& log_emission, const Eigen::VectorXd& initial_dist,
                            const Eigen::MatrixXd& transition) {
  const Eigen::Index n = log_emission.rows();
  const Eigen::Index k = log_emission.cols();
  const int ki = static_cast<int>(k);
  if (n == 0) throw ValidationError("forward_backward: empty trajectory");

  Posteriors post;
  post.n_states = ki;
  post.gamma.resize(n, k);
  post.xi.assign(static_cast<std::size_t>(n > 0 ? n - 1 : 0) * k * k, 0.0);

  // Shifted emissions e(t, x) = exp(logE - max_x logE) and normalized filters.
  RowMatrix emit(n, k);
  RowMatrix filter(n, k);
  Eigen::VectorXd pred(k);
  double loglik = 0.0;
  for (Eigen::Index t = 0; t < n; ++t) {
    const double top = log_emission.row(t).maxCoeff();
    if (top == kNegInf) {
      post.loglik = kNegInf;
      post.gamma.setConstant(std::numeric_limits<double>::quiet_NaN());
      return post;
    }
    for (Eigen::Index x = 0; x < k; ++x) emit(t, x) = std::exp(log_emission(t, x) - top);
    if (t == 0) {
      pred = initial_dist;
    } else {
      pred.noalias() = transition.transpose() * filter.row(t - 1).transpose();
    }
    double s = 0.0;
    for (Eigen::Index x = 0; x < k; ++x) {
      filter(t, x) = pred[x] * emit(t, x);
      s += filter(t, x);
    }
    if (!(s > 0.0)) {
      post.loglik = kNegInf;
      post.gamma.setConstant(std::numeric_limits<double>::quiet_NaN());
      return post;
    }
    filter.row(t) /= s;
    loglik += top + std::log(s);
  }
  post.loglik = loglik;

  Eigen::VectorXd beta = Eigen::VectorXd::Ones(k);
  Eigen::VectorXd next(k);
  {
    const Eigen::Index t = n - 1;
    double s = 0.0;
    for (Eigen::Index x = 0; x < k; ++x) s += (post.gamma(t, x) = filter(t, x));
    post.gamma.row(t) /= s;
  }
  for (Eigen::Index t = n - 2; t >= 0; --t) {
    // next(y) = e_{t+1}(y) beta_{t+1}(y)
    for (Eigen::Index y = 0; y < k; ++y) next[y] = emit(t + 1, y) * beta[y];
    double* xi = post.xi.data() + static_cast<std::size_t>(t) * k * k;
    double total = 0.0;
    for (Eigen::Index x = 0; x < k; ++x) {
      for (Eigen::Index y = 0; y < k; ++y) {
        const double v = filter(t, x) * transition(x, y) * next[y];
        xi[x * k + y] = v;
        total += v;
      }
    }
    for (Eigen::Index i = 0; i < k * k; ++i) xi[i] /= total;

    beta.noalias() = transition * next;
    beta /= beta.sum();

    double s = 0.0;
    for (Eigen::Index x = 0; x < k; ++x) {
      double g = 0.0;
      for (Eigen::Index y = 0; y < k; ++y) g += xi[x * k + y];
      post.gamma(t, x) = g;
      s += g;
    }
    post.gamma.row(t) /= s;
  }
  return post;
}

ForwardResult log_forward(const ModelParams& params, const Trajectory& traj) {
  if (traj.length() == 0) throw ValidationError("log_forward: empty trajectory");
  return forward(emission_logdensities(params, traj), params.initial_dist, params.transition);
}

Posteriors posterior(const ModelParams& params, const Trajectory& traj) {
  if (traj.length() == 0) throw ValidationError("posterior: empty trajectory");
  return forward_backward(emission_logdensities(params, traj), params.initial_dist, params.transition);
}

double brute_force_loglik(const ModelParams& params, const Trajectory& traj) {
  const std::size_t n = traj.length();
  const int k = params.n_states;
  if (n == 0) throw ValidationError("brute_force_loglik: empty trajectory");
  double paths = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    paths *= k;
    if (paths > 1e7) throw SizeError("brute_force_loglik: K^n exceeds 1e7 paths");
  }
  const RowMatrix log_emission = emission_logdensities(params, traj);
  const Eigen::MatrixXd log_q = params.transition.array().log();
  const Eigen::VectorXd log_pi = params.initial_dist.array().log();

  // Streaming log-sum-exp over paths enumerated by an odometer.
  std::vector<int> path(n, 0);
  double top = kNegInf;
  double acc = 0.0;
  while (true) {
    double v = log_pi[path[0]] + log_emission(0, path[0]);
    for (std::size_t t = 1; t < n; ++t)
      v += log_q(path[t - 1], path[t]) + log_emission(static_cast<Eigen::Index>(t), path[t]);
    if (v > top) {
      acc = (top == kNegInf) ? 1.0 : acc * std::exp(top - v) + 1.0;
      top = v;
    } else if (v != kNegInf) {
      acc += std::exp(v - top);
    }
    std::size_t pos = 0;
    while (pos < n && ++path[pos] == k) path[pos++] = 0;
    if (pos == n) break;
  }
  return top == kNegInf ? kNegInf : top + std::log(acc);
}

}  // namespace trendhmm
