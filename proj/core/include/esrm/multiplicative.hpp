#pragma once

#include <vector>

#include "esrm/dataset.hpp"
#include "esrm/types.hpp"

namespace esrm {

struct NewtonOptions {
  double tol = 1e-8;          // gradient sup-norm at convergence
  double rel_tol = 1e-10;     // relative loss change at convergence
  int max_iter = 200;
  double divergence_norm = 1e3;  // |beta|_inf beyond this aborts the iteration
  // Monotone likelihoods reach the gradient tolerance at finite but absurd
  // coefficients (the gradient decays like exp(-|beta|)); a converged fit
  // beyond this scale is reported as monotone likelihood. Covariates here are
  // O(1), so rate ratios beyond e^15 have no finite-data support.
  double separation_norm = 15.0;
};

/// Stratified negative partial log-likelihood
///   L(beta) = -(1/n) sum_s sum_{events e in s} [X_e beta(s) - log sum_{j in R_s(t_e)} exp(X_j beta(s))]
/// with Breslow tie handling and max-shifted log-sum-exp. Returns +inf for
/// non-finite linear predictors.
double neg_partial_loglik(const StratifiedDesign& design, const Dataset& data,
                          const CoefMatrix& beta);

struct MultDerivatives {
  CoefMatrix gradient;                   // p x B; block s = -(1/n) sum (X_e - E_n(s,t_e))
  std::vector<Eigen::MatrixXd> hessian;  // B blocks; block s = (1/n) sum V_n(s,t_e)
};

/// The loss separates across strata, so the Hessian is block-diagonal.
MultDerivatives gradient_and_hessian(const StratifiedDesign& design, const Dataset& data,
                                     const CoefMatrix& beta);

/// Loss and gradient without the Hessian (the proximal solver's inner loop).
/// Returns false when the loss is not finite at this beta.
bool loss_and_gradient(const StratifiedDesign& design, const Dataset& data,
                       const CoefMatrix& beta, double* loss, CoefMatrix* grad);

/// The pooled (unstratified) loss minimized by fit_constant_mult, at a single
/// p-vector.
double neg_partial_loglik_pooled(const StratifiedDesign& design, const Dataset& data,
                                 const Eigen::VectorXd& beta);

/// Per-stratum Newton iterations with Armijo step-halving from beta = 0.
FitResult fit_unconstrained_mult(const StratifiedDesign& design, const Dataset& data,
                                 const NewtonOptions& opts = {});

/// Newton on the unstratified partial likelihood: pooled risk sets
/// Y_j(t) = 1{T_j >= t} and all events pooled, one p-vector broadcast to B
/// columns (the constant model with a single pooled baseline).
FitResult fit_constant_mult(const StratifiedDesign& design, const Dataset& data,
                            const NewtonOptions& opts = {});

/// Newton on sum_s L_s(beta) with one shared p-vector but stratum-specific
/// baselines; this is the lambda -> infinity limit of the TV-penalized fit.
FitResult fit_common_stratified_mult(const StratifiedDesign& design, const Dataset& data,
                                     const NewtonOptions& opts = {});

}  // namespace esrm
