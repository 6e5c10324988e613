#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "esrm/penalty.hpp"
#include "esrm/simulate.hpp"

namespace esrm {

/// Mean squared rescaled error (1/M) sum_m |beta_m - beta0|_F^2 / |beta0|_F^2.
double mse(const std::vector<CoefMatrix>& estimates, const CoefMatrix& beta0);

/// False positives: covariates flagged non-constant whose truth is constant.
/// False negatives: the reverse. Both use detect_nonconstant with fuse_tol.
std::pair<int, int> fp_fn(const CoefMatrix& estimate, const CoefMatrix& beta0,
                          double fuse_tol = 1e-8);

struct LambdaRule {
  enum class Mode {
    pilot_cv,  // cross-validate once on a pilot replication, reuse that lambda
    cv_each,   // cross-validate inside every replication
    fixed,     // use `lambda` as given
  };
  Mode mode = Mode::pilot_cv;
  double lambda = 0.0;
  int folds = 5;
  int grid_size = 25;  // points of the default log-spaced grid
};

struct EstimatorSummary {
  double mse = 0.0;
  double mean_fp = 0.0;
  double mean_fn = 0.0;
  int failures = 0;  // replications excluded from the averages
  int M = 0;         // replications attempted
  std::string first_error;
  bool all_failed() const { return failures == M; }
};

struct StudyResult {
  std::map<EstimatorKind, EstimatorSummary> estimators;
  double lambda_used = 0.0;  // lambda of the tv fits under pilot_cv / fixed rules
  std::vector<std::string> notes;
};

struct StudyConfig {
  SimConfig sim;
  int M = 200;
  std::vector<EstimatorKind> estimators = {EstimatorKind::unconstrained, EstimatorKind::constant,
                                           EstimatorKind::tv, EstimatorKind::tv_two_step};
  LambdaRule lambda_rule;
  double fuse_tol = 1e-8;
  int threads = 0;  // 0 = hardware concurrency
};

/// Seeded Monte Carlo study: per replication simulate, fit every requested
/// estimator, accumulate metrics. Replications where an estimator fails are
/// excluded from that estimator's averages and counted. Replications may run
/// concurrently; per-replication seeds derive from (seed, replication index)
/// and aggregation order is fixed, so results do not depend on scheduling.
StudyResult run_study(const StudyConfig& cfg);

struct AnalysisRow {
  std::string covariate;
  int stratum = 0;  // 1-based
  EstimatorKind estimator = EstimatorKind::unconstrained;
  double estimate = 0.0;
};

struct AnalysisReport {
  std::vector<AnalysisRow> rows;
  std::map<EstimatorKind, FitResult> fits;
  std::map<EstimatorKind, std::string> errors;  // estimators that failed
  double lambda = 0.0;                          // lambda used by the tv fits
  int n = 0;
};

/// Fits the requested estimators on a real dataset; per-estimator failures
/// are reported without aborting the others.
AnalysisReport analyze(const Dataset& data, ModelKind model,
                       const std::vector<EstimatorKind>& estimators, const LambdaRule& rule);

/// Tidy `covariate,stratum,estimator,estimate` rows for plotting.
void write_analysis_csv(const AnalysisReport& report, std::ostream& out);

/// One `estimator,mse,mean_fp,mean_fn,failures,M,lambda` row per estimator;
/// NA where every replication failed.
void write_study_csv(const StudyResult& result, const std::vector<EstimatorKind>& order,
                     std::ostream& out);

}  // namespace esrm
