#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "test_util.hpp"
#include "trendhmm/errors.hpp"
#include "trendhmm/experiments.hpp"
#include "trendhmm/io.hpp"

using namespace trendhmm;
using namespace trendhmm::experiments;

namespace {

const char* kSmallConfig = R"({
  // single flat state
  "kind": "rate",
  "truth": {
    "transition": [[1]],
    "variances": [1],
    "trends": [{"monomial": [0.5, 1e-4]}]
  },
  "n_values": [1000, 10000],
  "n_replications": 3,
  "fit": {"degree_bound": 2, "n_restarts": 2},
  "master_seed": 99
})";

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

}  // namespace

TEST_CASE("trajectory CSV round trip") {
  const auto p = testutil::diverging_model(1000);
  const Trajectory traj = simulate(p, 1000, 3);
  std::stringstream buf;
  io::write_trajectory_csv(buf, traj);
  const std::string text = buf.str();
  CHECK(text.rfind("t,y,x,b\n", 0) == 0);
  const Trajectory back = io::read_trajectory_csv(buf);
  CHECK(back.observations == traj.observations);
  CHECK(*back.hidden_states == *traj.hidden_states);
  CHECK(*back.blocks == *traj.blocks);

  std::istringstream plain("t,y\n1,0.5\n2,-1e-3\n");
  const Trajectory two = io::read_trajectory_csv(plain);
  CHECK(two.length() == 2);
  CHECK(!two.hidden_states);

  std::istringstream gap("t,y\n1,0.5\n3,1\n");
  CHECK_THROWS_AS(io::read_trajectory_csv(gap), ValidationError);
  std::istringstream junk("t,y\n1,abc\n");
  CHECK_THROWS_AS(io::read_trajectory_csv(junk), ValidationError);
  std::istringstream noy("t,z\n1,1\n");
  CHECK_THROWS_AS(io::read_trajectory_csv(noy), ValidationError);
  std::istringstream zero_state("t,y,x\n1,1,0\n");
  CHECK_THROWS_AS(io::read_trajectory_csv(zero_state), ValidationError);
}

TEST_CASE("parameter JSON round trip") {
  const auto p = testutil::diverging_model();
  const auto doc = io::params_to_json(p);
  const auto back = io::params_from_json(nlohmann::json::parse(doc.dump()));
  CHECK(back.n_states == 3);
  CHECK(back.transition == p.transition);
  CHECK(back.variances == p.variances);
  CHECK(back.trends == p.trends);
  CHECK(io::format_double(0.1) == "0.1");
  CHECK(std::stod(io::format_double(1.0 / 3.0)) == 1.0 / 3.0);

  const auto mono = io::trend_from_json(nlohmann::json::parse(R"({"monomial": [1, 2e-4, 1e-8]})"), 100000);
  CHECK(mono(1e4) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK_THROWS_AS(io::trend_from_json(nlohmann::json::parse(R"({"monomial": [1]})")), ValidationError);
  CHECK_THROWS_AS(io::trend_from_json(nlohmann::json::parse(R"({"basis": "chebyshev", "coefficients": [1], "n_scale": 5})")),
                  ValidationError);
}

TEST_CASE("bundled configs") {
  const auto cfg = load_config(TRENDHMM_SOURCE_DIR "/configs/experiment1.cfg");
  CHECK(cfg.kind == Kind::rate);
  CHECK(cfg.truth.n_states == 3);
  CHECK(cfg.truth.variances == Eigen::Vector3d(5.0, 10.0, 15.0));
  Eigen::Matrix3d q;
  q << 0.7, 0.2, 0.1, 0.2, 0.6, 0.2, 0.1, 0.1, 0.8;
  CHECK(cfg.truth.transition == q);
  for (double t : {0.0, 1.0, 777.0, 1e4, 1e5}) {
    const double t1 = 1e-8 * (t + 1e4) * (t + 1e4);
    CHECK(cfg.truth.trends[0](t) == doctest::Approx(t1).epsilon(1e-12));
    CHECK(cfg.truth.trends[1](t) == doctest::Approx(t1 - 5.0).epsilon(1e-12));
    CHECK(cfg.truth.trends[2](t) == doctest::Approx(3.0 * t1).epsilon(1e-12));
  }
  CHECK(cfg.fit.degree_bound == 4);
  CHECK(cfg.fit.sigma_minus == 0.0);

  const auto two = load_config(TRENDHMM_SOURCE_DIR "/configs/experiment2.cfg");
  CHECK(two.kind == Kind::fixed_n);
  for (double t : {0.0, 2500.0, 5000.0, 10000.0}) {
    const double u = (t - 5000.0) / 5000.0;
    CHECK(two.truth.trends[1](t) == doctest::Approx(3.0 * u * u - 1.0).epsilon(1e-12));
    CHECK(two.truth.trends[0](t) == 0.0);
  }
  CHECK(load_config(TRENDHMM_SOURCE_DIR "/configs/diagnostics.cfg").kind == Kind::diagnostics);
}

TEST_CASE("config validation") {
  CHECK_NOTHROW(parse_config(kSmallConfig));
  auto without = [](const std::string& key) {
    auto doc = nlohmann::json::parse(kSmallConfig, nullptr, true, true);
    doc.erase(key);
    return doc.dump();
  };
  CHECK_THROWS_WITH_AS(parse_config(without("n_values")), doctest::Contains("n_values"), ValidationError);
  CHECK_THROWS_WITH_AS(parse_config(without("truth")), doctest::Contains("truth"), ValidationError);
  CHECK_THROWS_WITH_AS(parse_config(without("kind")), doctest::Contains("kind"), ValidationError);

  auto doc = nlohmann::json::parse(kSmallConfig, nullptr, true, true);
  doc["truth"]["variances"] = {-1.0};
  CHECK_THROWS_WITH_AS(parse_config(doc.dump()), doctest::Contains("variance"), ValidationError);
  doc = nlohmann::json::parse(kSmallConfig, nullptr, true, true);
  doc["n_values"] = {100, 50};
  CHECK_THROWS_AS(parse_config(doc.dump()), ValidationError);
  doc = nlohmann::json::parse(kSmallConfig, nullptr, true, true);
  doc["n_replications"] = "three";
  CHECK_THROWS_WITH_AS(parse_config(doc.dump()), doctest::Contains("n_replications"), ValidationError);
  CHECK_THROWS_WITH_AS(parse_config("{\"kind\": \"rate\",\n  oops}", "bad.cfg"), doctest::Contains("bad.cfg"),
                       ValidationError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.cfg"), ValidationError);
}

TEST_CASE("seed derivation") {
  CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
  CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
  CHECK(derive_seed(1, 2) != derive_seed(2, 2));
}

TEST_CASE("error metrics ignore the labelling of the estimate") {
  const auto truth = testutil::diverging_model();
  auto est = truth;
  est.trends[0] += 0.3;
  est.variances[2] = 14.0;
  const ErrorRecord a = evaluate_fit(est, truth, 100000);
  CHECK(a.err_trend_sup[0] == doctest::Approx(0.3).epsilon(1e-9));
  CHECK(a.err_var_max == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(a.err_q_frobenius == 0.0);
  for (const std::vector<int>& perm : {std::vector<int>{2, 0, 1}, std::vector<int>{1, 0, 2}}) {
    const ErrorRecord b = evaluate_fit(est.relabeled(perm), truth, 100000);
    CHECK(b.err_trend_sup == a.err_trend_sup);
    CHECK(b.err_q_frobenius == a.err_q_frobenius);
    CHECK(b.err_var_max == a.err_var_max);
  }
}

TEST_CASE("slopes") {
  std::vector<ErrorRecord> recs;
  for (std::size_t n : {100, 1000, 10000, 100000}) {
    for (int r = 0; r < 2; ++r) {
      ErrorRecord e;
      e.replication = r;
      e.n = n;
      e.err_trend_sup = {3.0 / std::sqrt(static_cast<double>(n))};
      e.err_q_frobenius = 0.2;
      e.err_var_max = 5.0 / std::sqrt(static_cast<double>(n));
      recs.push_back(e);
    }
  }
  const auto rows = fit_slopes(recs);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].metric == "err_trend_sup_1");
  CHECK(std::abs(rows[0].line.slope + 0.5) <= 1e-10);
  CHECK(std::abs(rows[1].line.slope) <= 1e-12);
  CHECK(std::abs(rows[2].line.slope + 0.5) <= 1e-10);

  recs.resize(2);  // a single n
  CHECK_THROWS_AS(fit_slopes(recs), ValidationError);
}

TEST_CASE("error CSV") {
  std::ostringstream empty;
  write_error_csv(empty, {}, 2);
  CHECK(empty.str() == "replication,n,err_trend_sup_1,err_trend_sup_2,err_q_frobenius,err_var_max,loglik,wall_time_s,status\n");

  std::vector<ErrorRecord> recs;
  for (int r = 0; r < 2; ++r) {
    for (std::size_t n : {500, 5000}) {
      ErrorRecord e;
      e.replication = r;
      e.n = n;
      e.err_trend_sup = {0.1 * (r + 1) / 3.0, std::sqrt(2.0) / static_cast<double>(n)};
      e.err_q_frobenius = 1.0 / 7.0;
      e.err_var_max = 2e-9;
      e.loglik = -1234.5678901234;
      recs.push_back(e);
    }
  }
  recs.back().status = "failed: degenerate state 2";
  std::stringstream buf;
  write_error_csv(buf, recs, 2);
  const std::string text = buf.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 5);
  const auto back = read_error_csv(buf);
  REQUIRE(back.size() == recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(back[i].replication == recs[i].replication);
    CHECK(back[i].n == recs[i].n);
    for (std::size_t x = 0; x < 2; ++x)
      CHECK(std::abs(back[i].err_trend_sup[x] - recs[i].err_trend_sup[x]) <= 1e-12 * recs[i].err_trend_sup[x]);
    CHECK(back[i].err_q_frobenius == recs[i].err_q_frobenius);
    CHECK(back[i].err_var_max == recs[i].err_var_max);
    CHECK(back[i].loglik == recs[i].loglik);
    CHECK(back[i].status == recs[i].status);
  }
}

TEST_CASE("single-state rate study") {
  const auto cfg = parse_config(kSmallConfig);
  const auto recs = run_rate_experiment(cfg);
  REQUIRE(recs.size() == 6);
  std::vector<double> small, large;
  for (const auto& r : recs) {
    CHECK(r.ok());
    CHECK(r.wall_time_s == 0.0);
    CHECK(r.err_trend_sup[0] >= 0.0);
    (r.n == 1000 ? small : large).push_back(r.err_trend_sup[0]);
  }
  CHECK(median_of(large) < median_of(small));

  // Deterministic, independent of the worker count.
  ExperimentOptions two_jobs;
  two_jobs.jobs = 2;
  const auto again = run_rate_experiment(cfg, two_jobs);
  std::ostringstream a, b;
  write_error_csv(a, recs, 1);
  write_error_csv(b, again, 1);
  CHECK(a.str() == b.str());

  const auto dir = std::filesystem::temp_directory_path() / "trendhmm_test_outputs";
  std::filesystem::remove_all(dir);
  write_outputs(recs, format_rate_report(recs, 1), dir, 1);
  for (const char* f : {"errors.csv", "slopes.csv", "report.txt", "plotdata_err_trend_sup_1.csv",
                        "plotdata_err_q_frobenius.csv", "plotdata_err_var_max.csv"})
    CHECK(std::filesystem::exists(dir / f));
  CHECK(slurp(dir / "errors.csv") == a.str());
  const std::string plot = slurp(dir / "plotdata_err_trend_sup_1.csv");
  CHECK(plot.rfind("x,y,ymin,ymax\n", 0) == 0);
  CHECK(std::count(plot.begin(), plot.end(), '\n') == 3);
  std::filesystem::remove_all(dir);
}
