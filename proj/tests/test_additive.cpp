#include <doctest.h>

#include <random>

#include "esrm/additive.hpp"
#include "esrm/penalty.hpp"
#include "esrm/simulate.hpp"
#include "test_util.hpp"

using namespace esrm;

namespace {

SimConfig additive_sim(int n, uint64_t seed) {
  SimConfig cfg;
  cfg.model = ModelKind::additive;
  cfg.n = n;
  cfg.B = 5;
  cfg.beta0 = make_beta0(1.0, 0.5, 0.2, 5);
  cfg.baseline.shape = 2.5;
  cfg.death_rate = 0.35;
  cfg.censor_rate = 0.35;
  cfg.seed = seed;
  return cfg;
}

AdditiveSystem assemble(const Dataset& data) {
  return assemble_additive(build_design(data), data);
}

}  // namespace

TEST_CASE("assemble: a single subject is centered away entirely") {
  const Dataset data = testutil::make_dataset({{3.0, false, {1.0, 2.0}, {0.7, -0.2}}}, 3);
  const AdditiveSystem sys = assemble(data);
  for (int s = 0; s < 3; ++s) {
    CHECK(sys.H[s].cwiseAbs().maxCoeff() == 0.0);
    CHECK(sys.h[s].cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("assemble: two-subject hand integration") {
  // X = 0 and 1, both at risk for the first event on (0,2], no events:
  // H(1) = (1/2) * 2 * ((0-1/2)^2 + (1-1/2)^2) = 0.5
  const Dataset data =
      testutil::make_dataset({{2.0, false, {}, {0.0}}, {2.0, false, {}, {1.0}}}, 1);
  const AdditiveSystem sys = assemble(data);
  CHECK(sys.H[0](0, 0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(sys.h[0].cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("assemble: permutation invariance") {
  const Dataset data = simulate_dataset(additive_sim(60, 31));
  Dataset reversed = data;
  std::reverse(reversed.subjects.begin(), reversed.subjects.end());
  const AdditiveSystem a = assemble(data);
  const AdditiveSystem b = assemble(reversed);
  for (int s = 0; s < 5; ++s) {
    CHECK((a.H[s] - b.H[s]).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((a.h[s] - b.h[s]).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("assemble: H blocks are symmetric positive semidefinite") {
  const AdditiveSystem sys = assemble(simulate_dataset(additive_sim(80, 13)));
  for (const auto& H : sys.H) {
    CHECK((H - H.transpose()).cwiseAbs().maxCoeff() == 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(H);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-10);
  }
}

TEST_CASE("additive_loss: pinned examples and independent recomputation") {
  AdditiveSystem sys;
  sys.n = 1;
  sys.p = 1;
  sys.H = {Eigen::MatrixXd::Constant(1, 1, 1.0)};
  sys.h = {Eigen::VectorXd::Constant(1, 1.0)};
  sys.empty_stratum = {false};
  CHECK(additive_loss(sys, CoefMatrix::Zero(1, 1)) == 0.0);
  CHECK(additive_loss(sys, CoefMatrix::Constant(1, 1, 2.0)) == 0.0);  // 4 - 4

  const AdditiveSystem sim = assemble(simulate_dataset(additive_sim(50, 7)));
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (int rep = 0; rep < 5; ++rep) {
    CoefMatrix beta(sim.p, 5);
    for (int j = 0; j < sim.p; ++j)
      for (int s = 0; s < 5; ++s) beta(j, s) = unif(rng);
    // naive scalar recomputation
    double expect = 0.0;
    for (int s = 0; s < 5; ++s) {
      for (int j = 0; j < sim.p; ++j) {
        for (int k = 0; k < sim.p; ++k) expect += beta(j, s) * sim.H[s](j, k) * beta(k, s);
        expect -= 2.0 * sim.h[s][j] * beta(j, s);
      }
    }
    CHECK(additive_loss(sim, beta) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("additive_loss: exact quadratic expansion between any two points") {
  const AdditiveSystem sys = assemble(simulate_dataset(additive_sim(50, 8)));
  std::mt19937_64 rng(123);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (int rep = 0; rep < 5; ++rep) {
    CoefMatrix a(sys.p, 5), b(sys.p, 5);
    for (int j = 0; j < sys.p; ++j)
      for (int s = 0; s < 5; ++s) {
        a(j, s) = unif(rng);
        b(j, s) = unif(rng);
      }
    double expansion = 0.0;  // L(a) - L(b) via the quadratic model
    for (int s = 0; s < 5; ++s) {
      const Eigen::VectorXd da = a.col(s), db = b.col(s);
      expansion += da.dot(sys.H[s] * da) - db.dot(sys.H[s] * db) - 2.0 * sys.h[s].dot(da - db);
    }
    CHECK(additive_loss(sys, a) - additive_loss(sys, b) ==
          doctest::Approx(expansion).epsilon(1e-10));
  }
}

TEST_CASE("fit_unconstrained_additive: pinned solves and the gradient condition") {
  AdditiveSystem sys;
  sys.n = 1;
  sys.p = 2;
  Eigen::MatrixXd H(2, 2);
  H << 2.0, 0.0, 0.0, 1.0;
  sys.H = {H};
  sys.h = {Eigen::Vector2d(2.0, 3.0)};
  sys.empty_stratum = {false};
  const FitResult fit = fit_unconstrained_additive(sys);
  CHECK(fit.beta(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(fit.beta(1, 0) == doctest::Approx(3.0).epsilon(1e-14));

  // zero h -> zero estimate
  sys.h = {Eigen::Vector2d::Zero()};
  CHECK(fit_unconstrained_additive(sys).beta.cwiseAbs().maxCoeff() == 0.0);

  const AdditiveSystem sim = assemble(simulate_dataset(additive_sim(120, 4)));
  const FitResult f2 = fit_unconstrained_additive(sim);
  CHECK(additive_gradient(sim, f2.beta).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("fit_unconstrained_additive: covariate rescaling maps the estimate exactly") {
  const Dataset data = simulate_dataset(additive_sim(90, 21));
  Dataset scaled = data;
  const double c = 2.5;
  for (auto& subj : scaled.subjects) subj.covariates[1] *= c;
  const FitResult f1 = fit_unconstrained_additive(assemble(data));
  const FitResult f2 = fit_unconstrained_additive(assemble(scaled));
  for (int s = 0; s < 5; ++s) {
    CHECK(f2.beta(1, s) == doctest::Approx(f1.beta(1, s) / c).epsilon(1e-9));
    CHECK(f2.beta(0, s) == doctest::Approx(f1.beta(0, s)).epsilon(1e-9));
  }
}

TEST_CASE("fit_unconstrained_additive: singular stratum errors unless pseudo-inverse") {
  AdditiveSystem sys;
  sys.n = 2;
  sys.p = 1;
  sys.H = {Eigen::MatrixXd::Constant(1, 1, 1.0), Eigen::MatrixXd::Zero(1, 1)};
  sys.h = {Eigen::VectorXd::Constant(1, 0.5), Eigen::VectorXd::Zero(1)};
  sys.empty_stratum = {false, true};
  CHECK_THROWS_AS(fit_unconstrained_additive(sys), EstimationError);
  const FitResult fit = fit_unconstrained_additive(sys, true);
  CHECK(fit.beta(0, 1) == 0.0);
  REQUIRE_FALSE(fit.warnings.empty());
}

TEST_CASE("fit_constant_additive: identical strata make all estimators agree") {
  const AdditiveSystem one = assemble(simulate_dataset(additive_sim(70, 17)));
  AdditiveSystem rep;
  rep.n = one.n;
  rep.p = one.p;
  rep.H = {one.H[0], one.H[0], one.H[0]};
  rep.h = {one.h[0], one.h[0], one.h[0]};
  rep.empty_stratum = {false, false, false};
  const FitResult uncon = fit_unconstrained_additive(rep);
  const FitResult cons = fit_constant_additive(rep);
  CHECK((uncon.beta - cons.beta).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("identical strata: the TV fit coincides at any lambda") {
  const AdditiveSystem one = assemble(simulate_dataset(additive_sim(70, 18)));
  AdditiveSystem rep;
  rep.n = one.n;
  rep.p = one.p;
  rep.H = {one.H[0], one.H[0], one.H[0]};
  rep.h = {one.h[0], one.h[0], one.h[0]};
  rep.empty_stratum = {false, false, false};
  const FitResult uncon = fit_unconstrained_additive(rep);
  for (double lambda : {0.0, 3.0, 300.0}) {
    PenaltyConfig cfg;
    cfg.lambda = lambda;
    const FitResult tv_fit = fit_tv_additive(rep, cfg);
    CHECK((tv_fit.beta - uncon.beta).cwiseAbs().maxCoeff() < 1e-7);
  }
}

TEST_CASE("fit_constant_additive: matches a stacked least-squares oracle") {
  const AdditiveSystem sys = assemble(simulate_dataset(additive_sim(100, 55)));
  Eigen::MatrixXd Hp = Eigen::MatrixXd::Zero(sys.p, sys.p);
  Eigen::VectorXd hp = Eigen::VectorXd::Zero(sys.p);
  for (int s = 0; s < sys.B(); ++s) {
    Hp += sys.H[s];
    hp += sys.h[s];
  }
  const Eigen::VectorXd oracle = Hp.fullPivLu().solve(hp);
  const FitResult fit = fit_constant_additive(sys);
  for (int s = 0; s < sys.B(); ++s)
    CHECK((fit.beta.col(s) - oracle).cwiseAbs().maxCoeff() < 1e-12);

  AdditiveSystem zero = sys;
  for (auto& h : zero.h) h.setZero();
  CHECK(fit_constant_additive(zero).beta.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("score_residual_diag: no events and no effect give a centered zero") {
  const Dataset data =
      testutil::make_dataset({{2.0, false, {}, {0.3}}, {1.5, false, {}, {0.9}}}, 2);
  const auto Z = score_residual_diag(build_design(data), data, CoefMatrix::Zero(1, 2),
                                     BaselineSpec{});
  for (const auto& z : Z) CHECK(z.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("score_residual_diag: the partial least-squares identity holds to 1e-8") {
  const SimConfig cfg = additive_sim(150, 42);
  const Dataset data = simulate_dataset(cfg);
  const StratifiedDesign design = build_design(data);
  const AdditiveSystem sys = assemble_additive(design, data);
  const auto Z = score_residual_diag(design, data, cfg.beta0, cfg.baseline);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (int rep = 0; rep < 5; ++rep) {
    CoefMatrix beta(4, 5);
    for (int j = 0; j < 4; ++j)
      for (int s = 0; s < 5; ++s) beta(j, s) = unif(rng);
    double rhs = 0.0;
    for (int s = 0; s < 5; ++s) {
      const Eigen::VectorXd b = beta.col(s);
      rhs += b.dot(sys.H[s] * b) - 2.0 * b.dot(sys.H[s] * cfg.beta0.col(s)) -
             2.0 * Z[s].dot(b);
    }
    const double lhs = additive_loss(sys, beta);
    CHECK(std::abs(lhs - rhs) <= 1e-8 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("score_residual_diag: Monte Carlo mean is centered (smoke)") {
  const int reps = 60;
  const SimConfig base = additive_sim(100, 0);
  std::vector<Eigen::VectorXd> sums(5, Eigen::VectorXd::Zero(4));
  std::vector<Eigen::VectorXd> sq(5, Eigen::VectorXd::Zero(4));
  for (int m = 0; m < reps; ++m) {
    SimConfig cfg = base;
    cfg.seed = derive_seed(909, kReplicationStream, m);
    const Dataset data = simulate_dataset(cfg);
    const auto Z = score_residual_diag(build_design(data), data, cfg.beta0, cfg.baseline);
    for (int s = 0; s < 5; ++s) {
      sums[s] += Z[s];
      sq[s] += Z[s].cwiseProduct(Z[s]);
    }
  }
  for (int s = 0; s < 5; ++s) {
    for (int j = 0; j < 4; ++j) {
      const double mean = sums[s][j] / reps;
      const double var = sq[s][j] / reps - mean * mean;
      const double se = std::sqrt(var / reps);
      CHECK(std::abs(mean) <= 4.0 * se);
    }
  }
}

TEST_CASE("unconstrained additive estimate improves with sample size, replication-wise") {
  for (uint64_t seed : {101, 102, 103, 104, 105}) {
    SimConfig small = additive_sim(150, seed);
    SimConfig large = additive_sim(1500, seed + 1000);
    const FitResult fs = fit_unconstrained_additive(assemble(simulate_dataset(small)));
    const FitResult fl = fit_unconstrained_additive(assemble(simulate_dataset(large)));
    const double err_small = (fs.beta - small.beta0).norm();
    const double err_large = (fl.beta - large.beta0).norm();
    CHECK(err_large < err_small);
  }
}
