#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "test_util.hpp"
#include "trendhmm/errors.hpp"
#include "trendhmm/inference.hpp"

using namespace trendhmm;

namespace {

ModelParams one_state(double var, double level = 0.0) {
  ModelParams p;
  p.n_states = 1;
  p.initial_dist = uniform_distribution(1);
  p.transition = Eigen::MatrixXd::Ones(1, 1);
  p.variances = Eigen::VectorXd::Constant(1, var);
  p.trends.push_back(TrendPoly::constant(level, 100));
  return p;
}

}  // namespace

TEST_CASE("emission log-density") {
  const auto p = one_state(1.0);
  CHECK(emission_logdensity(p, 0.0, 3.0)[0] == doctest::Approx(-0.9189385332046727).epsilon(1e-14));

  const auto m = testutil::diverging_model();
  CHECK(emission_logdensity(m, 4.0, 1e4)[0] ==
        doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi * 5.0)).epsilon(1e-12));

  // Translating both the observation and the trend.
  auto shifted = m;
  for (auto& t : shifted.trends) t += 7.25;
  const Eigen::VectorXd a = emission_logdensity(m, 2.5, 300.0);
  const Eigen::VectorXd b = emission_logdensity(shifted, 9.75, 300.0);
  CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("forward equals brute-force path enumeration") {
  std::mt19937_64 rng(1234);
  for (int k = 1; k <= 3; ++k) {
    for (std::size_t n = 1; n <= 8; ++n) {
      for (int rep = 0; rep < 50; ++rep) {
        const auto p = testutil::random_params(rng, k, 2, static_cast<std::int64_t>(n));
        const auto traj = testutil::random_observations(rng, n);
        const double fwd = log_forward(p, traj).loglik;
        const double brute = brute_force_loglik(p, traj);
        REQUIRE(std::abs(fwd - brute) <= 1e-9);
        double ref = 0.0;
        testutil::enumerate_gamma(p, traj, &ref);
        REQUIRE(std::abs(fwd - ref) <= 1e-9);
      }
    }
  }
}

TEST_CASE("degenerate chains") {
  std::mt19937_64 rng(6);
  const auto p = one_state(2.0, 0.5);
  const auto traj = testutil::random_observations(rng, 40);
  double sum = 0.0;
  for (double y : traj.observations) sum += testutil::gauss_logpdf(y, 0.5, 2.0);
  CHECK(log_forward(p, traj).loglik == doctest::Approx(sum).epsilon(1e-12));
  CHECK(brute_force_loglik(p, traj) == doctest::Approx(sum).epsilon(1e-12));

  const Posteriors post = posterior(p, traj);
  CHECK(post.gamma.isOnes());
  for (double v : post.xi) CHECK(v == doctest::Approx(1.0).epsilon(1e-14));

  // n = 1 is a mixture.
  const auto m = testutil::random_params(rng, 3, 1, 5);
  Trajectory one;
  one.observations = {0.8};
  double mix = 0.0;
  for (int x = 0; x < 3; ++x)
    mix += m.initial_dist[x] * std::exp(testutil::gauss_logpdf(0.8, m.trends[x](1.0), m.variances[x]));
  CHECK(log_forward(m, one).loglik == doctest::Approx(std::log(mix)).epsilon(1e-12));
  CHECK(brute_force_loglik(m, one) == doctest::Approx(std::log(mix)).epsilon(1e-12));
}

TEST_CASE("brute force and forward agree on a K=2, n=10 instance") {
  std::mt19937_64 rng(42);
  const auto p = testutil::random_params(rng, 2, 3, 10);
  const auto traj = simulate(p, 10, 42);
  CHECK(std::abs(brute_force_loglik(p, traj) - log_forward(p, traj).loglik) <= 1e-10);
}

TEST_CASE("posteriors match enumeration") {
  std::mt19937_64 rng(77);
  for (int rep = 0; rep < 20; ++rep) {
    for (int k : {2, 3}) {
      const auto p = testutil::random_params(rng, k, 2, 6);
      const auto traj = testutil::random_observations(rng, 6);
      const Posteriors post = posterior(p, traj);
      const Eigen::MatrixXd ref = testutil::enumerate_gamma(p, traj);
      CHECK((Eigen::MatrixXd(post.gamma) - ref).cwiseAbs().maxCoeff() <= 1e-10);
    }
  }
}

TEST_CASE("posterior marginal consistency") {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> kd(1, 4);
  std::uniform_int_distribution<int> nd(2, 60);
  for (int rep = 0; rep < 100; ++rep) {
    const int k = kd(rng);
    const auto n = static_cast<std::size_t>(nd(rng));
    const auto p = testutil::random_params(rng, k, 3, static_cast<std::int64_t>(n));
    const auto traj = simulate(p, n, rng());
    const Posteriors post = posterior(p, traj);
    CHECK(post.loglik == doctest::Approx(log_forward(p, traj).loglik).epsilon(1e-12));
    for (std::size_t t = 0; t < n; ++t) {
      CHECK(std::abs(post.gamma.row(static_cast<Eigen::Index>(t)).sum() - 1.0) <= 1e-10);
      for (int x = 0; x < k; ++x) {
        const double g = post.gamma(static_cast<Eigen::Index>(t), x);
        CHECK(g >= 0.0);
        CHECK(g <= 1.0 + 1e-12);
        if (t + 1 < n) {
          double row = 0.0;
          for (int y = 0; y < k; ++y) {
            const double v = post.xi_at(t, x, y);
            CHECK(v >= 0.0);
            CHECK(v <= 1.0 + 1e-12);
            row += v;
          }
          CHECK(std::abs(row - g) <= 1e-10);
        }
      }
    }
  }
}

TEST_CASE("uniform transitions decouple time steps") {
  std::mt19937_64 rng(14);
  auto p = testutil::random_params(rng, 3, 1, 20);
  p.transition = Eigen::MatrixXd::Constant(3, 3, 1.0 / 3.0);
  p.initial_dist = uniform_distribution(3);
  const auto traj = testutil::random_observations(rng, 20);
  const Posteriors post = posterior(p, traj);
  for (std::size_t t = 0; t < 20; ++t) {
    const Eigen::VectorXd e = emission_logdensity(p, traj.observations[t], static_cast<double>(t + 1));
    const Eigen::VectorXd w = (e.array() - e.maxCoeff()).exp();
    const Eigen::VectorXd expect = w / w.sum();
    CHECK((post.gamma.row(static_cast<Eigen::Index>(t)).transpose() - expect).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("likelihood is invariant under relabeling") {
  std::mt19937_64 rng(90);
  for (int rep = 0; rep < 20; ++rep) {
    const auto p = testutil::random_params(rng, 3, 4, 200);
    const auto traj = simulate(p, 200, rng());
    const double base = log_forward(p, traj).loglik;
    std::vector<int> perm{0, 1, 2};
    while (std::next_permutation(perm.begin(), perm.end()))
      CHECK(std::abs(log_forward(p.relabeled(perm), traj).loglik - base) <= 1e-10 * (1.0 + std::abs(base)));
  }
}

TEST_CASE("one more observation changes the likelihood within ergodic bounds") {
  std::mt19937_64 rng(55);
  for (int rep = 0; rep < 30; ++rep) {
    const double sm = 0.1;
    const auto p = testutil::random_params(rng, 3, 2, 50, sm);
    const auto traj = simulate(p, 50, rng());
    const double full = log_forward(p, traj).loglik;
    const double head = log_forward(p, traj.prefix(49)).loglik;
    const Eigen::VectorXd e = emission_logdensity(p, traj.observations[49], 50.0);
    CHECK(full - head >= e.minCoeff() + std::log(sm) - 1e-10);
    CHECK(full - head <= e.maxCoeff() + 1e-10);
  }
}

TEST_CASE("masked emissions") {
  RowMatrix em(3, 2);
  em << -1.0, -2.0, -INFINITY, -0.5, -0.3, -INFINITY;
  const Eigen::VectorXd pi = uniform_distribution(2);
  Eigen::MatrixXd q(2, 2);
  q << 0.6, 0.4, 0.3, 0.7;
  const ForwardResult r = forward(em, pi, q, true, true);
  // Only path (0 or 1, 1, 0) survives.
  const double p0 = 0.5 * std::exp(-1.0) * 0.4 * std::exp(-0.5) * 0.3 * std::exp(-0.3);
  const double p1 = 0.5 * std::exp(-2.0) * 0.7 * std::exp(-0.5) * 0.3 * std::exp(-0.3);
  CHECK(r.loglik == doctest::Approx(std::log(p0 + p1)).epsilon(1e-13));
  REQUIRE(r.step_loglik.size() == 3);
  double s = 0.0;
  for (double v : r.step_loglik) s += v;
  CHECK(s == doctest::Approx(r.loglik).epsilon(1e-13));

  em(1, 1) = -INFINITY;
  const ForwardResult dead = forward(em, pi, q);
  CHECK(std::isinf(dead.loglik));
  CHECK(dead.loglik < 0.0);
}

TEST_CASE("input checks") {
  const auto p = one_state(1.0);
  Trajectory empty;
  CHECK_THROWS_AS(log_forward(p, empty), ValidationError);
  CHECK_THROWS_AS(posterior(p, empty), ValidationError);
  std::mt19937_64 rng(1);
  const auto big = testutil::random_params(rng, 3, 1, 30);
  const auto traj = testutil::random_observations(rng, 30);
  CHECK_THROWS_AS(brute_force_loglik(big, traj), SizeError);
}
