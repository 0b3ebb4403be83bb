#include "trendhmm/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "trendhmm/errors.hpp"

namespace trendhmm {

namespace {

double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

// L(k, j): coefficient of u^j in P~_k(u).
Eigen::MatrixXd legendre_to_monomial_matrix(int degree) {
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(degree + 1, degree + 1);
  for (int k = 0; k <= degree; ++k) {
    for (int j = 0; j <= k; ++j) {
      const double sign = ((k + j) % 2 == 0) ? 1.0 : -1.0;
      l(k, j) = sign * binomial(k, j) * binomial(k + j, j);
    }
  }
  return l;
}

std::vector<double> unit_monomial_to_legendre(const std::vector<double>& m) {
  const int d = static_cast<int>(m.size()) - 1;
  const Eigen::MatrixXd l = legendre_to_monomial_matrix(d);
  // m_j = sum_{k >= j} c_k L(k, j): upper-triangular in (j, k).
  std::vector<double> c(m.size(), 0.0);
  for (int j = d; j >= 0; --j) {
    double acc = m[j];
    for (int k = j + 1; k <= d; ++k) acc -= c[k] * l(k, j);
    c[j] = acc / l(j, j);
  }
  return c;
}

}  // namespace

TrendPoly::TrendPoly(std::vector<double> coefficients, std::int64_t n_scale)
    : coefficients_(std::move(coefficients)), n_scale_(n_scale) {
  if (coefficients_.empty()) throw ValidationError("TrendPoly: needs at least one coefficient");
  if (n_scale_ <= 0) throw ValidationError("TrendPoly: n_scale must be positive");
}

TrendPoly TrendPoly::constant(double value, std::int64_t n_scale, int degree_bound) {
  std::vector<double> c(static_cast<std::size_t>(degree_bound) + 1, 0.0);
  c[0] = value;
  return TrendPoly(std::move(c), n_scale);
}

TrendPoly TrendPoly::from_monomial(std::span<const double> t_coefficients, std::int64_t n_scale) {
  if (t_coefficients.empty()) throw ValidationError("TrendPoly: needs at least one coefficient");
  std::vector<double> m(t_coefficients.begin(), t_coefficients.end());
  double power = 1.0;
  for (auto& v : m) {
    v *= power;
    power *= static_cast<double>(n_scale);
  }
  return TrendPoly(unit_monomial_to_legendre(m), n_scale);
}

void shifted_legendre_basis(double u, std::span<double> out) {
  if (out.empty()) return;
  const double x = 2.0 * u - 1.0;
  out[0] = 1.0;
  if (out.size() == 1) return;
  out[1] = x;
  for (std::size_t k = 1; k + 1 < out.size(); ++k) {
    const double kk = static_cast<double>(k);
    out[k + 1] = ((2.0 * kk + 1.0) * x * out[k] - kk * out[k - 1]) / (kk + 1.0);
  }
}

double TrendPoly::operator()(double t) const {
  const double x = 2.0 * (t / static_cast<double>(n_scale_)) - 1.0;
  double prev = 1.0;
  double acc = coefficients_[0];
  if (coefficients_.size() == 1) return acc;
  double cur = x;
  acc += coefficients_[1] * cur;
  for (std::size_t k = 1; k + 1 < coefficients_.size(); ++k) {
    const double kk = static_cast<double>(k);
    const double next = ((2.0 * kk + 1.0) * x * cur - kk * prev) / (kk + 1.0);
    prev = cur;
    cur = next;
    acc += coefficients_[k + 1] * cur;
  }
  return acc;
}

std::vector<double> TrendPoly::to_unit_monomial() const {
  const int d = degree_bound();
  const Eigen::MatrixXd l = legendre_to_monomial_matrix(d);
  std::vector<double> m(coefficients_.size(), 0.0);
  for (int k = 0; k <= d; ++k)
    for (int j = 0; j <= k; ++j) m[j] += coefficients_[k] * l(k, j);
  return m;
}

std::vector<double> TrendPoly::to_monomial() const {
  std::vector<double> m = to_unit_monomial();
  double inv = 1.0;
  for (auto& v : m) {
    v *= inv;
    inv /= static_cast<double>(n_scale_);
  }
  return m;
}

TrendPoly TrendPoly::rebased(std::int64_t n_scale) const {
  if (n_scale == n_scale_) return *this;
  if (n_scale <= 0) throw ValidationError("TrendPoly: n_scale must be positive");
  // u' = (n / n') u, so the u'^j coefficient is m_j (n' / n)^j.
  std::vector<double> m = to_unit_monomial();
  const double ratio = static_cast<double>(n_scale) / static_cast<double>(n_scale_);
  double power = 1.0;
  for (auto& v : m) {
    v *= power;
    power *= ratio;
  }
  return TrendPoly(unit_monomial_to_legendre(m), n_scale);
}

TrendPoly TrendPoly::padded(int degree_bound) const {
  if (degree_bound <= this->degree_bound()) return *this;
  std::vector<double> c = coefficients_;
  c.resize(static_cast<std::size_t>(degree_bound) + 1, 0.0);
  return TrendPoly(std::move(c), n_scale_);
}

TrendPoly& TrendPoly::operator+=(double c) {
  coefficients_[0] += c;
  return *this;
}

std::vector<double> difference_unit_monomial(const TrendPoly& a, const TrendPoly& b, std::int64_t n) {
  const int d = std::max(a.degree_bound(), b.degree_bound());
  const std::vector<double> ma = a.rebased(n).padded(d).to_unit_monomial();
  const std::vector<double> mb = b.rebased(n).padded(d).to_unit_monomial();
  std::vector<double> diff(ma.size());
  for (std::size_t j = 0; j < diff.size(); ++j) diff[j] = ma[j] - mb[j];
  return diff;
}

double eval_trend(const TrendPoly& trend, double t) { return trend(t); }

void ModelParams::validate(double variance_floor) const {
  const auto k = static_cast<Eigen::Index>(n_states);
  if (n_states < 1) throw ValidationError("n_states must be >= 1");
  if (initial_dist.size() != k) throw ValidationError("initial_dist must have n_states entries");
  if (transition.rows() != k || transition.cols() != k)
    throw ValidationError("transition must be n_states x n_states");
  if (variances.size() != k) throw ValidationError("variances must have n_states entries");
  if (trends.size() != static_cast<std::size_t>(n_states))
    throw ValidationError("trends must have n_states entries");
  if (!(sigma_minus >= 0.0) || sigma_minus > 1.0 / n_states + 1e-15)
    throw ValidationError("sigma_minus must lie in [0, 1/n_states]");
  if (!initial_dist.allFinite() || (initial_dist.array() < 0.0).any())
    throw ValidationError("initial_dist entries must be finite and >= 0");
  if (std::abs(initial_dist.sum() - 1.0) > 1e-12) throw ValidationError("initial_dist must sum to 1");
  if (!transition.allFinite()) throw ValidationError("transition entries must be finite");
  for (Eigen::Index x = 0; x < k; ++x) {
    if (std::abs(transition.row(x).sum() - 1.0) > 1e-12)
      throw ValidationError("transition row " + std::to_string(x + 1) + " must sum to 1");
    if (transition.row(x).minCoeff() < sigma_minus)
      throw ValidationError("transition row " + std::to_string(x + 1) + " has an entry below sigma_minus");
  }
  for (Eigen::Index x = 0; x < k; ++x) {
    if (!std::isfinite(variances[x]) || variances[x] < variance_floor)
      throw ValidationError("variance of state " + std::to_string(x + 1) + " must be finite and >= " +
                            std::to_string(variance_floor));
  }
  for (const auto& tr : trends) {
    for (double c : tr.coefficients())
      if (!std::isfinite(c)) throw ValidationError("trend coefficients must be finite");
  }
}

ModelParams ModelParams::relabeled(std::span<const int> perm) const {
  if (perm.size() != static_cast<std::size_t>(n_states)) throw ValidationError("relabeled: wrong permutation size");
  std::vector<bool> seen(static_cast<std::size_t>(n_states), false);
  for (int v : perm) {
    if (v < 0 || v >= n_states || seen[static_cast<std::size_t>(v)])
      throw ValidationError("relabeled: not a permutation");
    seen[static_cast<std::size_t>(v)] = true;
  }
  ModelParams out = *this;
  for (int x = 0; x < n_states; ++x) {
    const int ox = perm[x];
    out.initial_dist[x] = initial_dist[ox];
    out.variances[x] = variances[ox];
    out.trends[x] = trends[ox];
    for (int y = 0; y < n_states; ++y) out.transition(x, y) = transition(ox, perm[y]);
  }
  return out;
}

ModelParams ModelParams::rebased(std::int64_t n) const {
  ModelParams out = *this;
  for (auto& tr : out.trends) tr = tr.rebased(n);
  return out;
}

Eigen::VectorXd uniform_distribution(int k) {
  return Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k));
}

Eigen::VectorXd stationary_distribution(const Eigen::MatrixXd& transition) {
  const Eigen::Index k = transition.rows();
  // Solve pi (Q - I) = 0 with sum(pi) = 1 as an overdetermined system.
  Eigen::MatrixXd a(k + 1, k);
  a.topRows(k) = (transition - Eigen::MatrixXd::Identity(k, k)).transpose();
  a.row(k).setOnes();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(k + 1);
  b[k] = 1.0;
  Eigen::VectorXd pi = a.colPivHouseholderQr().solve(b);
  pi = pi.cwiseMax(0.0);
  return pi / pi.sum();
}

Trajectory Trajectory::prefix(std::size_t n) const {
  if (n > length()) throw ValidationError("prefix longer than trajectory");
  Trajectory out;
  out.observations.assign(observations.begin(), observations.begin() + static_cast<std::ptrdiff_t>(n));
  if (hidden_states)
    out.hidden_states.emplace(hidden_states->begin(), hidden_states->begin() + static_cast<std::ptrdiff_t>(n));
  if (blocks) out.blocks.emplace(blocks->begin(), blocks->begin() + static_cast<std::ptrdiff_t>(n));
  out.seed = seed;
  return out;
}

void Trajectory::validate(std::optional<int> n_states) const {
  if (hidden_states && hidden_states->size() != length())
    throw ValidationError("hidden_states length differs from observations");
  if (blocks && blocks->size() != length()) throw ValidationError("blocks length differs from observations");
  for (double y : observations)
    if (!std::isfinite(y)) throw ValidationError("observations must be finite");
  if (hidden_states) {
    for (int x : *hidden_states) {
      if (x < 0 || (n_states && x >= *n_states))
        throw ValidationError("hidden state " + std::to_string(x + 1) + " out of range");
    }
  }
  if (blocks) {
    for (int b : *blocks)
      if (b < 0) throw ValidationError("block labels must be >= 0");
  }
}

double BlockStructure::max_abs_offset() const {
  double m = 0.0;
  for (double d : offsets) m = std::max(m, std::abs(d));
  return m;
}

Trajectory simulate(const ModelParams& params, std::size_t n, std::uint64_t seed) {
  params.validate();
  if (n < 1) throw ValidationError("simulate: n must be >= 1");
  const int k = params.n_states;

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

  Eigen::VectorXd sd = params.variances.array().sqrt();
  Trajectory traj;
  traj.seed = seed;
  traj.observations.resize(n);
  std::vector<int> states(n);
  int x = draw([&](int i) { return params.initial_dist[i]; });
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0) {
      const int prev = x;
      x = draw([&](int j) { return params.transition(prev, j); });
    }
    states[i] = x;
    const double t = static_cast<double>(i + 1);
    traj.observations[i] = params.trends[x](t) + sd[x] * normal(rng);
  }

  const BlockStructure blocks = compute_blocks(params, n);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = blocks.block_of_state[states[i]];
  traj.hidden_states = std::move(states);
  traj.blocks = std::move(labels);
  return traj;
}

std::vector<double> default_block_grid(std::size_t n) {
  constexpr int kPoints = 256;
  std::vector<double> grid(kPoints);
  const double hi = static_cast<double>(std::max<std::size_t>(n, 1));
  for (int i = 0; i < kPoints; ++i) grid[i] = 1.0 + (hi - 1.0) * i / (kPoints - 1);
  return grid;
}

double default_block_tolerance(const ModelParams& params, std::span<const double> grid) {
  double top = 0.0;
  for (const auto& tr : params.trends)
    for (double t : grid) top = std::max(top, std::abs(tr(t)));
  return 1e-6 * (1.0 + top);
}

BlockStructure compute_blocks(const ModelParams& params, double tolerance, std::span<const double> grid) {
  if (grid.empty()) throw ValidationError("compute_blocks: empty grid");
  if (!(tolerance >= 0.0)) throw ValidationError("compute_blocks: tolerance must be >= 0");
  const int k = params.n_states;
  const auto g = grid.size();

  std::vector<std::vector<double>> values(k, std::vector<double>(g));
  for (int x = 0; x < k; ++x)
    for (std::size_t i = 0; i < g; ++i) values[x][i] = params.trends[x](grid[i]);

  // mean_diff(x, y) is the grid mean of T_x - T_y; related(x, y) when the
  // difference never strays more than tolerance from that mean.
  Eigen::MatrixXd mean_diff = Eigen::MatrixXd::Zero(k, k);
  std::vector<std::vector<bool>> related(k, std::vector<bool>(k, true));
  for (int x = 0; x < k; ++x) {
    for (int y = 0; y < k; ++y) {
      if (x == y) continue;
      double mean = 0.0;
      for (std::size_t i = 0; i < g; ++i) mean += values[x][i] - values[y][i];
      mean /= static_cast<double>(g);
      double dev = 0.0;
      for (std::size_t i = 0; i < g; ++i) dev = std::max(dev, std::abs(values[x][i] - values[y][i] - mean));
      mean_diff(x, y) = mean;
      related[x][y] = dev <= tolerance;
    }
  }
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b)
      for (int c = 0; c < k; ++c) {
        if (related[a][b] && related[b][c] && !related[a][c]) {
          throw NonTransitiveBlocksError("trend equivalence is not transitive: states " + std::to_string(a + 1) +
                                         "~" + std::to_string(b + 1) + ", " + std::to_string(b + 1) + "~" +
                                         std::to_string(c + 1) + " but not " + std::to_string(a + 1) + "~" +
                                         std::to_string(c + 1));
        }
      }

  BlockStructure out;
  out.tolerance = tolerance;
  out.block_of_state.assign(k, -1);
  out.offsets.assign(k, 0.0);
  std::vector<int> representative;
  for (int x = 0; x < k; ++x) {
    if (out.block_of_state[x] >= 0) continue;
    const int id = static_cast<int>(representative.size());
    representative.push_back(x);
    out.reference_trend.push_back(params.trends[x]);
    for (int y = x; y < k; ++y) {
      if (related[x][y] && out.block_of_state[y] < 0) {
        out.block_of_state[y] = id;
        out.offsets[y] = (y == x) ? 0.0 : mean_diff(y, x);
      }
    }
  }
  return out;
}

BlockStructure compute_blocks(const ModelParams& params, std::size_t n) {
  const auto grid = default_block_grid(n);
  return compute_blocks(params, default_block_tolerance(params, grid), grid);
}

double block_separation(const BlockStructure& blocks, double t) {
  double best = std::numeric_limits<double>::infinity();
  const int b = blocks.n_blocks();
  for (int i = 0; i < b; ++i)
    for (int j = i + 1; j < b; ++j)
      best = std::min(best, std::abs(blocks.reference_trend[i](t) - blocks.reference_trend[j](t)));
  return best;
}

}  // namespace trendhmm

namespace trendhmm {

namespace {

double horner(const std::vector<double>& m, double u) {
  double acc = 0.0;
  for (auto it = m.rbegin(); it != m.rend(); ++it) acc = acc * u + *it;
  return acc;
}

}  // namespace

double trend_sup_distance(const TrendPoly& a, const TrendPoly& b, std::int64_t horizon) {
  if (horizon <= 0) throw ValidationError("trend_sup_distance: horizon must be positive");
  const std::vector<double> p = difference_unit_monomial(a, b, horizon);
  const int d = static_cast<int>(p.size()) - 1;
  if (d == 0) return std::abs(p[0]);

  std::vector<double> dp(static_cast<std::size_t>(d));
  for (int j = 1; j <= d; ++j) dp[j - 1] = j * p[j];

  const int cells = std::max(64 * (d + 1), 256);
  double best = 0.0;
  double u_prev = 0.0;
  double d_prev = horner(dp, 0.0);
  best = std::abs(horner(p, 0.0));
  for (int i = 1; i <= cells; ++i) {
    const double u = static_cast<double>(i) / cells;
    const double d_cur = horner(dp, u);
    best = std::max(best, std::abs(horner(p, u)));
    if ((d_prev < 0.0 && d_cur > 0.0) || (d_prev > 0.0 && d_cur < 0.0)) {
      // Bisection on the derivative sign change isolates one stationary point.
      double lo = u_prev;
      double hi = u;
      double f_lo = d_prev;
      for (int it = 0; it < 80 && hi - lo > 1e-16; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double f_mid = horner(dp, mid);
        if ((f_mid < 0.0) == (f_lo < 0.0)) {
          lo = mid;
          f_lo = f_mid;
        } else {
          hi = mid;
        }
      }
      best = std::max(best, std::abs(horner(p, 0.5 * (lo + hi))));
    }
    u_prev = u;
    d_prev = d_cur;
  }
  return best;
}

}  // namespace trendhmm
