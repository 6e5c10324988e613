#pragma once

#include <functional>
#include <vector>

#include "esrm/additive.hpp"
#include "esrm/multiplicative.hpp"
#include "esrm/types.hpp"

namespace esrm {

/// Configuration of the covariate-specific total-variation penalty
/// (lambda/n) * sum_j sum_{s>=2} w_j(s) |beta^j(s) - beta^j(s-1)|.
struct PenaltyConfig {
  double lambda = 0.0;              // raw lambda_n; the criterion divides by n
  Eigen::MatrixXd weights;          // p x (B-1), nonnegative; empty means all ones
  double fuse_tol = 1e-8;           // |tv| below this counts as fused
  int max_iter = 100000;            // CD sweeps / proximal iterations
  double kkt_tol_penalized = 1e-6;  // scaled by max(1, lambda/n)
  double kkt_tol_free = 1e-8;       // absolute, unpenalized coordinates
  double rel_obj_tol = 1e-9;        // relative objective change (proximal solver)
  double separation_norm = 15.0;    // see NewtonOptions::separation_norm
};

/// Total variation of one coefficient profile: sum_{s>=2} |row(s) - row(s-1)|.
template <class Derived>
double tv(const Eigen::MatrixBase<Derived>& beta_row) {
  if (beta_row.rows() != 1 && beta_row.cols() != 1)
    throw std::invalid_argument("tv expects a vector");
  double total = 0.0;
  for (Eigen::Index s = 1; s < beta_row.size(); ++s)
    total += std::abs(beta_row(s) - beta_row(s - 1));
  return total;
}

/// Increment ("lasso") coordinates: gamma^j(1) = beta^j(1),
/// gamma^j(s) = beta^j(s) - beta^j(s-1). The inverse is a cumulative row sum.
/// Under gamma the penalty is a weighted l1 norm on the s >= 2 entries, with
/// gamma^j(1) unpenalized.
CoefMatrix reparam_to_increments(const CoefMatrix& beta);
CoefMatrix reparam_from_increments(const CoefMatrix& gamma);

/// sign(x) * max(|x| - t, 0)
double soft_threshold(double x, double t);

/// Cyclic coordinate descent on the increment coordinates; the quadratic loss
/// admits an exact soft-threshold step per coordinate. The returned fit
/// carries a KKT certificate: penalized coordinates satisfy the subgradient
/// condition within kkt_tol_penalized * max(1, lambda/n), unpenalized ones
/// have |gradient| <= kkt_tol_free.
FitResult fit_tv_additive(const AdditiveSystem& sys, const PenaltyConfig& cfg,
                          const CoefMatrix* warm_start = nullptr);

/// Accelerated proximal gradient with backtracking on the increment
/// coordinates; acceleration restarts whenever the objective would increase.
/// Same KKT certificate as fit_tv_additive.
FitResult fit_tv_mult(const StratifiedDesign& design, const Dataset& data,
                      const PenaltyConfig& cfg, const CoefMatrix* warm_start = nullptr);

/// w_j(s) = 1 / (|delta beta1^j(s)| + epsilon)
Eigen::MatrixXd reweighting_weights(const CoefMatrix& beta1, double epsilon);

/// 1e-4 times the largest per-covariate range of beta1 (1e-4 when all rows
/// are constant).
double default_reweight_epsilon(const CoefMatrix& beta1);

/// Second fit at the same lambda with magnitude-inverse weights from fit1.
/// `refit` runs the model-appropriate TV solver with the supplied weights.
FitResult reweighted_two_step(
    const FitResult& fit1, double epsilon,
    const std::function<FitResult(const Eigen::MatrixXd& weights)>& refit);

/// Covariate j is flagged non-constant iff tv(beta^j) > fuse_tol.
std::vector<bool> detect_nonconstant(const CoefMatrix& beta, double fuse_tol = 1e-8);

struct LambdaSelection {
  double lambda = 0.0;              // selected lambda_n
  std::vector<double> grid;         // descending
  std::vector<double> cv_mean;      // mean held-out loss per grid point
  std::vector<FitResult> path;      // full-data fits along the grid
  std::vector<std::string> warnings;
  int folds_evaluated = 0;
};

/// 50 log-spaced values from lambda_max (smallest fully fusing lambda, found
/// by bisection) down to lambda_max / 1e3.
std::vector<double> default_lambda_grid(const Dataset& data, ModelKind model,
                                        const PenaltyConfig& base, int size = 50);

/// K-fold cross-validation by subjects (fold of subject i is i mod K); the
/// score is the held-out fold's own loss at the trained coefficients. Folds
/// whose training part has an empty stratum are skipped with a warning.
LambdaSelection select_lambda(const Dataset& data, ModelKind model, std::vector<double> grid,
                              int folds, const PenaltyConfig& base);

}  // namespace esrm
