#include "esrm/evaluate.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <thread>

namespace esrm {

double mse(const std::vector<CoefMatrix>& estimates, const CoefMatrix& beta0) {
  if (estimates.empty()) throw std::invalid_argument("mse needs at least one estimate");
  const double denom = beta0.squaredNorm();
  if (denom == 0.0) throw std::invalid_argument("mse undefined for beta0 = 0");
  double acc = 0.0;
  for (const auto& est : estimates) {
    if (est.rows() != beta0.rows() || est.cols() != beta0.cols())
      throw std::invalid_argument("estimate and beta0 dimensions differ");
    acc += (est - beta0).squaredNorm() / denom;
  }
  return acc / static_cast<double>(estimates.size());
}

std::pair<int, int> fp_fn(const CoefMatrix& estimate, const CoefMatrix& beta0, double fuse_tol) {
  if (estimate.rows() != beta0.rows() || estimate.cols() != beta0.cols())
    throw std::invalid_argument("estimate and beta0 dimensions differ");
  const std::vector<bool> est_flags = detect_nonconstant(estimate, fuse_tol);
  const std::vector<bool> true_flags = detect_nonconstant(beta0, fuse_tol);
  int fp = 0, fn = 0;
  for (size_t j = 0; j < est_flags.size(); ++j) {
    if (est_flags[j] && !true_flags[j]) ++fp;
    if (!est_flags[j] && true_flags[j]) ++fn;
  }
  return {fp, fn};
}

namespace {

struct ReplicationOutcome {
  // one entry per requested estimator: the estimate or an error message
  std::vector<std::optional<CoefMatrix>> beta;
  std::vector<std::string> error;
};

FitResult fit_one(EstimatorKind kind, ModelKind model, const Dataset& data,
                  const StratifiedDesign& design, const AdditiveSystem* sys, double lambda,
                  double fuse_tol, const CoefMatrix* warm) {
  PenaltyConfig cfg;
  cfg.lambda = lambda;
  cfg.fuse_tol = fuse_tol;
  switch (kind) {
    case EstimatorKind::unconstrained:
      return model == ModelKind::additive ? fit_unconstrained_additive(*sys)
                                          : fit_unconstrained_mult(design, data);
    case EstimatorKind::constant:
      return model == ModelKind::additive ? fit_constant_additive(*sys)
                                          : fit_constant_mult(design, data);
    case EstimatorKind::tv:
      return model == ModelKind::additive ? fit_tv_additive(*sys, cfg, warm)
                                          : fit_tv_mult(design, data, cfg, warm);
    case EstimatorKind::tv_two_step: {
      const FitResult step1 = model == ModelKind::additive ? fit_tv_additive(*sys, cfg, warm)
                                                           : fit_tv_mult(design, data, cfg, warm);
      return reweighted_two_step(
          step1, default_reweight_epsilon(step1.beta), [&](const Eigen::MatrixXd& w) {
            PenaltyConfig cfg2 = cfg;
            cfg2.weights = w;
            return model == ModelKind::additive ? fit_tv_additive(*sys, cfg2, &step1.beta)
                                                : fit_tv_mult(design, data, cfg2, &step1.beta);
          });
    }
  }
  throw std::logic_error("unknown estimator kind");
}

bool needs_lambda(const std::vector<EstimatorKind>& kinds) {
  for (auto k : kinds)
    if (k == EstimatorKind::tv || k == EstimatorKind::tv_two_step) return true;
  return false;
}

}  // namespace

StudyResult run_study(const StudyConfig& cfg) {
  cfg.sim.validate();
  if (cfg.M < 1) throw std::invalid_argument("M must be >= 1");
  StudyResult result;

  double lambda = cfg.lambda_rule.lambda;
  const bool want_tv = needs_lambda(cfg.estimators);
  if (want_tv && cfg.lambda_rule.mode == LambdaRule::Mode::pilot_cv) {
    SimConfig pilot = cfg.sim;
    pilot.seed = derive_seed(cfg.sim.seed, kPilotStream, 0);
    const Dataset pilot_data = simulate_dataset(pilot);
    PenaltyConfig base;
    base.fuse_tol = cfg.fuse_tol;
    const auto grid =
        default_lambda_grid(pilot_data, cfg.sim.model, base, cfg.lambda_rule.grid_size);
    const LambdaSelection sel =
        select_lambda(pilot_data, cfg.sim.model, grid, cfg.lambda_rule.folds, base);
    lambda = sel.lambda;
    char note[128];
    std::snprintf(note, sizeof(note), "pilot cv selected lambda=%.10g (lambda/sqrt(n)=%.10g)",
                  lambda, lambda / std::sqrt(static_cast<double>(cfg.sim.n)));
    result.notes.push_back(note);
  }
  result.lambda_used = lambda;

  const int E = static_cast<int>(cfg.estimators.size());
  std::vector<ReplicationOutcome> slots(cfg.M);

  auto run_replication = [&](int m) {
    ReplicationOutcome out;
    out.beta.resize(E);
    out.error.resize(E);
    SimConfig rep = cfg.sim;
    rep.seed = derive_seed(cfg.sim.seed, kReplicationStream, static_cast<uint64_t>(m));
    try {
      const Dataset data = simulate_dataset(rep);
      const StratifiedDesign design = build_design(data);
      AdditiveSystem sys;
      if (cfg.sim.model == ModelKind::additive) sys = assemble_additive(design, data);

      double rep_lambda = lambda;
      if (want_tv && cfg.lambda_rule.mode == LambdaRule::Mode::cv_each) {
        PenaltyConfig base;
        base.fuse_tol = cfg.fuse_tol;
        const auto grid =
            default_lambda_grid(data, cfg.sim.model, base, cfg.lambda_rule.grid_size);
        rep_lambda =
            select_lambda(data, cfg.sim.model, grid, cfg.lambda_rule.folds, base).lambda;
      }

      // the constant fit, when it succeeds, warms the penalized fits
      CoefMatrix warm;
      bool has_warm = false;
      for (int e = 0; e < E; ++e) {
        const EstimatorKind kind = cfg.estimators[e];
        try {
          FitResult fit = fit_one(kind, cfg.sim.model, data, design, &sys, rep_lambda,
                                  cfg.fuse_tol, has_warm ? &warm : nullptr);
          if (kind == EstimatorKind::constant) {
            warm = fit.beta;
            has_warm = true;
          }
          out.beta[e] = std::move(fit.beta);
        } catch (const std::exception& ex) {
          out.error[e] = ex.what();
        }
      }
    } catch (const std::exception& ex) {
      for (int e = 0; e < E; ++e) out.error[e] = std::string("simulation failed: ") + ex.what();
    }
    slots[m] = std::move(out);
  };

  int threads = cfg.threads > 0 ? cfg.threads
                                : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min(threads, cfg.M));
  if (threads == 1) {
    for (int m = 0; m < cfg.M; ++m) run_replication(m);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int w = 0; w < threads; ++w) {
      pool.emplace_back([&]() {
        for (int m = next.fetch_add(1); m < cfg.M; m = next.fetch_add(1)) run_replication(m);
      });
    }
    for (auto& th : pool) th.join();
  }

  // aggregation in replication order: independent of the schedule above
  for (int e = 0; e < E; ++e) {
    EstimatorSummary summary;
    summary.M = cfg.M;
    std::vector<CoefMatrix> estimates;
    long fp_sum = 0, fn_sum = 0;
    for (int m = 0; m < cfg.M; ++m) {
      const auto& slot = slots[m];
      if (!slot.beta[e].has_value()) {
        ++summary.failures;
        if (summary.first_error.empty()) summary.first_error = slot.error[e];
        continue;
      }
      const auto [fp, fn] = fp_fn(*slot.beta[e], cfg.sim.beta0, cfg.fuse_tol);
      fp_sum += fp;
      fn_sum += fn;
      estimates.push_back(*slot.beta[e]);
    }
    if (!estimates.empty()) {
      summary.mse = mse(estimates, cfg.sim.beta0);
      summary.mean_fp = static_cast<double>(fp_sum) / estimates.size();
      summary.mean_fn = static_cast<double>(fn_sum) / estimates.size();
    }
    result.estimators[cfg.estimators[e]] = std::move(summary);
  }
  return result;
}

AnalysisReport analyze(const Dataset& data, ModelKind model,
                       const std::vector<EstimatorKind>& estimators, const LambdaRule& rule) {
  data.validate();
  AnalysisReport report;
  report.n = data.n();
  const StratifiedDesign design = build_design(data);
  AdditiveSystem sys;
  if (model == ModelKind::additive) sys = assemble_additive(design, data);

  double lambda = rule.lambda;
  if (needs_lambda(estimators) && rule.mode != LambdaRule::Mode::fixed) {
    PenaltyConfig base;
    const auto grid = default_lambda_grid(data, model, base, rule.grid_size);
    lambda = select_lambda(data, model, grid, rule.folds, base).lambda;
  }
  report.lambda = lambda;

  for (EstimatorKind kind : estimators) {
    try {
      FitResult fit = fit_one(kind, model, data, design, &sys, lambda, 1e-8, nullptr);
      for (int j = 0; j < data.p; ++j) {
        const std::string name = j < static_cast<int>(data.covariate_names.size())
                                     ? data.covariate_names[j]
                                     : "x" + std::to_string(j + 1);
        for (int s = 0; s < data.B; ++s)
          report.rows.push_back({name, s + 1, kind, fit.beta(j, s)});
      }
      report.fits[kind] = std::move(fit);
    } catch (const std::exception& ex) {
      report.errors[kind] = ex.what();
    }
  }
  return report;
}

namespace {

std::string fmt_g(double v, const char* spec = "%.17g") {
  char buf[40];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

}  // namespace

void write_analysis_csv(const AnalysisReport& report, std::ostream& out) {
  out << "covariate,stratum,estimator,estimate\n";
  for (const auto& row : report.rows)
    out << row.covariate << ',' << row.stratum << ',' << to_string(row.estimator) << ','
        << fmt_g(row.estimate) << "\n";
}

void write_study_csv(const StudyResult& result, const std::vector<EstimatorKind>& order,
                     std::ostream& out) {
  out << "estimator,mse,mean_fp,mean_fn,failures,M,lambda\n";
  for (EstimatorKind kind : order) {
    const auto it = result.estimators.find(kind);
    if (it == result.estimators.end()) continue;
    const EstimatorSummary& s = it->second;
    out << to_string(kind) << ',';
    if (s.all_failed()) out << "NA,NA,NA";
    else
      out << fmt_g(s.mse, "%.10g") << ',' << fmt_g(s.mean_fp, "%.10g") << ','
          << fmt_g(s.mean_fn, "%.10g");
    out << ',' << s.failures << ',' << s.M << ',';
    const bool penalized = kind == EstimatorKind::tv || kind == EstimatorKind::tv_two_step;
    out << (penalized ? fmt_g(result.lambda_used, "%.10g") : "NA") << "\n";
  }
}

}  // namespace esrm
