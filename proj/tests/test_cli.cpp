#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "trendhmm_cli_test";

int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + "\"" TRENDHMM_CLI "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path write(const std::string& name, const std::string& text) {
  fs::create_directories(kRoot);
  const fs::path p = kRoot / name;
  std::ofstream(p, std::ios::binary) << text;
  return p;
}

const char* kTruth = R"(
  "truth": {
    "transition": [[0.7, 0.3], [0.2, 0.8]],
    "variances": [1, 2],
    "trends": [{"monomial": [0]}, {"monomial": [2, -2.4e-3, 4.8e-7]}]
  },)";

std::string config(const std::string& kind, const std::string& extra) {
  return std::string("{\"kind\": \"") + kind + "\"," + kTruth + extra + "}";
}

/// Runs the same command into two directories and compares every file.
void check_byte_identical(const std::string& args_before_out, const std::string& env = "") {
  const fs::path a = kRoot / "run_a", b = kRoot / "run_b";
  fs::remove_all(a);
  fs::remove_all(b);
  REQUIRE(run(args_before_out + " --out " + a.string(), env) == 0);
  REQUIRE(run(args_before_out + " --out " + b.string(), env) == 0);
  int files = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    ++files;
    const fs::path other = b / entry.path().filename();
    REQUIRE(fs::exists(other));
    CHECK_MESSAGE(slurp(entry.path()) == slurp(other), entry.path().filename().string());
  }
  CHECK(files > 0);
}

}  // namespace

TEST_CASE("simulate and fit are byte-stable") {
  const auto cfg = write("fit.cfg", config("fixed_n", R"("n_values": [2500], "fit": {"n_restarts": 2}, "master_seed": 4)"));
  check_byte_identical("simulate --config " + cfg.string());
  const fs::path data = kRoot / "run_a" / "trajectory.csv";
  const std::string traj = slurp(data);
  CHECK(traj.rfind("t,y,x,b\n", 0) == 0);
  CHECK(std::count(traj.begin(), traj.end(), '\n') == 2501);

  const fs::path kept = write("data.csv", traj);
  check_byte_identical("fit --config " + cfg.string() + " --data " + kept.string());
  for (const char* f : {"fit.json", "loglik_trace.csv", "report.txt"}) CHECK(fs::exists(kRoot / "run_a" / f));
}

TEST_CASE("seed override") {
  const auto cfg = write("seed.cfg", config("fixed_n", R"("n_values": [300], "master_seed": 4)"));
  const fs::path a = kRoot / "seed_a", b = kRoot / "seed_b";
  REQUIRE(run("simulate --config " + cfg.string() + " --out " + a.string()) == 0);
  REQUIRE(run("simulate --config " + cfg.string() + " --out " + b.string(), "TRENDHMM_SEED=5") == 0);
  CHECK(slurp(a / "trajectory.csv") != slurp(b / "trajectory.csv"));
  REQUIRE(run("simulate --config " + cfg.string() + " --out " + b.string(), "TRENDHMM_SEED=4") == 0);
  CHECK(slurp(a / "trajectory.csv") == slurp(b / "trajectory.csv"));
  CHECK(run("simulate --config " + cfg.string() + " --out " + b.string(), "TRENDHMM_SEED=abc") == 1);
}

TEST_CASE("experiments are byte-stable") {
  const auto rate = write("rate.cfg", config("rate", R"("n_values": [400, 800], "n_replications": 2,
      "fit": {"degree_bound": 2, "n_restarts": 2}, "master_seed": 8)"));
  check_byte_identical("experiment --config " + rate.string());
  check_byte_identical("experiment --jobs 2 --config " + rate.string());
  CHECK(slurp(kRoot / "run_a" / "errors.csv").find("\n1,400,") != std::string::npos);
  check_byte_identical("experiment --cold-start --config " + rate.string());

  const auto fixed = write("fixed.cfg", config("fixed_n", R"("n_values": [1500], "fit": {"n_restarts": 2}, "master_seed": 3)"));
  check_byte_identical("experiment --config " + fixed.string());

  const auto diag = write("diag.cfg", config("diagnostics", R"("n_values": [500, 1500], "fit": {"n_restarts": 1},
      "diagnostics": {"segments": [1, 2, 4], "mc_length": 3000, "forgetting_t": 20}, "master_seed": 2)"));
  check_byte_identical("diagnose --config " + diag.string());
  for (const char* f : {"block_gap.csv", "homogenization.csv", "forgetting.csv", "report.txt"})
    CHECK(fs::exists(kRoot / "run_a" / f));
  check_byte_identical("experiment --config " + diag.string());
}

TEST_CASE("exit codes") {
  const auto good = write("ok.cfg", config("fixed_n", R"("n_values": [300])"));
  const std::string out = (kRoot / "codes").string();
  CHECK(run("") == 1);
  CHECK(run("bogus") == 1);
  CHECK(run("simulate --out " + out) == 1);
  CHECK(run("simulate --config /nonexistent.cfg --out " + out) == 1);
  CHECK(run("fit --config " + good.string() + " --data /nonexistent.csv --out " + out) == 1);
  CHECK(run("--help") == 0);

  const auto negative = write("neg.cfg", R"({"kind": "rate", "truth": {"transition": [[1]], "variances": [-1],
      "trends": [{"monomial": [0]}]}, "n_values": [100]})");
  CHECK(run("simulate --config " + negative.string() + " --out " + out) == 1);
  const auto syntax = write("syntax.cfg", "{\"kind\": ");
  CHECK(run("simulate --config " + syntax.string() + " --out " + out) == 1);
  const auto bad_csv = write("bad.csv", "t,y\n1,0.5\n3,0.1\n");
  CHECK(run("fit --config " + good.string() + " --data " + bad_csv.string() + " --out " + out) == 1);

  // Output path below a regular file cannot be created.
  const auto blocker = write("blocker", "x");
  CHECK(run("simulate --config " + good.string() + " --out " + (blocker / "sub").string()) == 2);
}
