#pragma once

#include <vector>

#include "esrm/baseline.hpp"
#include "esrm/dataset.hpp"
#include "esrm/types.hpp"

namespace esrm {

/// Per-stratum normal-equation blocks of the partial least-squares criterion:
/// H[s] = (1/n) sum_i int Y_i^s(t) (X_i - Xbar^s(t))^{x2} dt (symmetric PSD),
/// h[s] = (1/n) sum of centered covariates over stratum-s events.
struct AdditiveSystem {
  std::vector<Eigen::MatrixXd> H;
  std::vector<Eigen::VectorXd> h;
  int n = 0;
  int p = 0;
  std::vector<bool> empty_stratum;  // no positive-length exposure; H=0, h=0 there

  int B() const { return static_cast<int>(H.size()); }
};

/// Exact piecewise assembly: with time-fixed covariates the at-risk average
/// Xbar^s(t) is constant between consecutive risk-set change points, so every
/// integral reduces to a finite sum of interval-length-weighted outer products.
AdditiveSystem assemble_additive(const StratifiedDesign& design, const Dataset& data);

/// sum_s { beta(s)' H[s] beta(s) - 2 h[s]' beta(s) }
double additive_loss(const AdditiveSystem& sys, const CoefMatrix& beta);

/// Gradient of additive_loss: column s = 2 (H[s] beta(s) - h[s]).
CoefMatrix additive_gradient(const AdditiveSystem& sys, const CoefMatrix& beta);

/// Per-stratum solve of H[s] beta(s) = h[s]. A stratum whose H is singular
/// (reciprocal condition number < 1e-12) or empty is unidentifiable: error,
/// unless pseudo_inverse_fallback is set, in which case the minimum-norm
/// solution is returned with a warning.
FitResult fit_unconstrained_additive(const AdditiveSystem& sys,
                                     bool pseudo_inverse_fallback = false);

/// Single p-vector solving (sum_s H[s]) beta = sum_s h[s], broadcast to all
/// B columns.
FitResult fit_constant_additive(const AdditiveSystem& sys);

/// Centered-score diagnostic: Z_n(s) = event sum minus the exact compensator
/// integral under the additive rate alpha0(t) + X beta0(s). Only meaningful
/// when the generating truth (beta0, baseline) is known.
std::vector<Eigen::VectorXd> score_residual_diag(const StratifiedDesign& design,
                                                 const Dataset& data, const CoefMatrix& beta0,
                                                 const BaselineSpec& baseline);

}  // namespace esrm
