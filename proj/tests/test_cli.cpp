// End-to-end checks of the command line tool. The binary path arrives via the
// ESRM_CLI environment variable set by ctest.
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

namespace {

std::string cli_path() {
  const char* env = std::getenv("ESRM_CLI");
  return env ? env : "";
}

int run(const std::string& args) {
  const int rc = std::system((cli_path() + " " + args + " > /dev/null 2>&1").c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

long line_count(const std::string& text) {
  return std::count(text.begin(), text.end(), '\n');
}

}  // namespace

TEST_CASE("cli: simulate is byte-deterministic for a fixed seed") {
  REQUIRE_FALSE(cli_path().empty());
  const std::string base =
      "simulate --model mult --n 40 --baseline weibull:2.5 --b1 1 --b2 0.5 --b3 0.2 "
      "--pobs 0.28 --calib-reps 2000 ";
  REQUIRE(run(base + "--seed 31 --out /tmp/esrm_cli_a.csv") == 0);
  REQUIRE(run(base + "--seed 31 --out /tmp/esrm_cli_b.csv") == 0);
  const std::string a = slurp("/tmp/esrm_cli_a.csv");
  CHECK(a == slurp("/tmp/esrm_cli_b.csv"));
  CHECK(line_count(a) > 40);

  REQUIRE(run(base + "--seed 32 --out /tmp/esrm_cli_c.csv") == 0);
  CHECK(a != slurp("/tmp/esrm_cli_c.csv"));
}

TEST_CASE("cli: fit writes tidy estimates") {
  REQUIRE_FALSE(cli_path().empty());
  REQUIRE(run("simulate --model add --n 120 --baseline weibull:2.5 --pobs 0.28 --seed 7 "
              "--calib-reps 2000 --out /tmp/esrm_cli_fit_in.csv") == 0);
  REQUIRE(run("fit --model add --estimator tv --lambda 12 --B 5 --format long "
              "--in /tmp/esrm_cli_fit_in.csv --out /tmp/esrm_cli_fit_out.csv") == 0);
  const std::string text = slurp("/tmp/esrm_cli_fit_out.csv");
  CHECK(text.rfind("covariate,stratum,estimator,estimate\n", 0) == 0);
  CHECK(line_count(text) == 1 + 4 * 5);

  // repeated run: identical bytes
  REQUIRE(run("fit --model add --estimator tv --lambda 12 --B 5 --format long "
              "--in /tmp/esrm_cli_fit_in.csv --out /tmp/esrm_cli_fit_out2.csv") == 0);
  CHECK(text == slurp("/tmp/esrm_cli_fit_out2.csv"));
}

TEST_CASE("cli: calibrate writes a rates config") {
  REQUIRE_FALSE(cli_path().empty());
  REQUIRE(run("calibrate --model mult --pobs 0.14 --reps 2000 --tol 0.02 --seed 3 "
              "--out /tmp/esrm_cli_rates.conf") == 0);
  const std::string text = slurp("/tmp/esrm_cli_rates.conf");
  CHECK(text.find("a_D=") != std::string::npos);
  CHECK(text.find("a_C=") != std::string::npos);
  CHECK(text.find("achieved_pobs=") != std::string::npos);
}

TEST_CASE("cli: study runs a tiny configured Monte Carlo") {
  REQUIRE_FALSE(cli_path().empty());
  {
    std::ofstream conf("/tmp/esrm_cli_study.conf");
    conf << "model=add\nn=80\nM=2\nseed=11\nbaseline=weibull:2.5\n"
         << "a_D=0.45\na_C=0.45\nestimators=unconstrained,constant,tv\n"
         << "lambda_rule=fixed\nlambda=8\nthreads=1\n";
  }
  REQUIRE(run("study --config /tmp/esrm_cli_study.conf --out /tmp/esrm_cli_study.csv") == 0);
  const std::string text = slurp("/tmp/esrm_cli_study.csv");
  CHECK(text.rfind("estimator,mse,mean_fp,mean_fn,failures,M,lambda\n", 0) == 0);
  CHECK(line_count(text) == 4);
}

TEST_CASE("cli: failures exit nonzero with an error line") {
  REQUIRE_FALSE(cli_path().empty());
  CHECK(run("fit --model add --estimator tv --in /nonexistent.csv --out /tmp/x.csv") != 0);
  CHECK(run("simulate --model bogus --out /tmp/x.csv") != 0);
  CHECK(run("study --config /nonexistent.conf --out /tmp/x.csv") != 0);
}
