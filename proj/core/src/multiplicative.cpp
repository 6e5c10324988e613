#include "esrm/multiplicative.hpp"

#include <Eigen/Eigenvalues>
#include <cfloat>
#include <cmath>
#include <functional>
#include <limits>

namespace esrm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kSingularRcond = 1e-12;

struct EvalRequest {
  bool grad = false;
  bool hess = false;
};

// Accumulates loss/gradient/Hessian contributions of one risk structure at a
// single coefficient vector b. Linear predictors are exponentiated once per
// subject with a per-structure max shift; an event whose shifted risk sum
// underflows is recomputed with a local shift.
class StratumEvaluator {
 public:
  StratumEvaluator(const StratumDesign& st, const Eigen::MatrixXd& X, int n)
      : st_(st), X_(X), inv_n_(1.0 / static_cast<double>(n)) {}

  bool evaluate(const Eigen::VectorXd& b, const EvalRequest& req, double* loss,
                Eigen::VectorXd* grad, Eigen::MatrixXd* hess) const {
    const int p = static_cast<int>(X_.cols());
    *loss = 0.0;
    if (req.grad) grad->setZero(p);
    if (req.hess) hess->setZero(p, p);
    if (st_.blocks.empty()) return true;

    Eigen::VectorXd eta = X_ * b;
    double shift = -kInf;
    for (const auto& iv : st_.intervals) shift = std::max(shift, eta[iv.subject]);
    if (!std::isfinite(shift)) return false;
    Eigen::VectorXd w = Eigen::VectorXd::Zero(eta.size());
    for (const auto& iv : st_.intervals) w[iv.subject] = std::exp(eta[iv.subject] - shift);

    Eigen::VectorXd sum1(p);
    Eigen::MatrixXd sum2(p, p);
    for (const auto& blk : st_.blocks) {
      double s0 = 0.0;
      for (int j : blk.risk) s0 += w[j];
      double local_shift = shift;
      if (s0 < DBL_MIN) {  // all members underflowed against the global shift
        local_shift = -kInf;
        for (int j : blk.risk) local_shift = std::max(local_shift, eta[j]);
        s0 = 0.0;
        for (int j : blk.risk) s0 += std::exp(eta[j] - local_shift);
      }
      const double log_s0 = local_shift + std::log(s0);
      for (int i : blk.cases) *loss -= inv_n_ * (eta[i] - log_s0);
      if (!req.grad && !req.hess) continue;

      sum1.setZero();
      if (req.hess) sum2.setZero();
      for (int j : blk.risk) {
        const double wj = local_shift == shift ? w[j] : std::exp(eta[j] - local_shift);
        sum1.noalias() += wj * X_.row(j).transpose();
        if (req.hess) sum2.noalias() += wj * X_.row(j).transpose() * X_.row(j);
      }
      const Eigen::VectorXd E = sum1 / s0;
      if (req.grad)
        for (int i : blk.cases) grad->noalias() -= inv_n_ * (X_.row(i).transpose() - E);
      if (req.hess) {
        const double cases = static_cast<double>(blk.cases.size());
        hess->noalias() += (cases * inv_n_) * (sum2 / s0 - E * E.transpose());
      }
    }
    return std::isfinite(*loss);
  }

 private:
  const StratumDesign& st_;
  const Eigen::MatrixXd& X_;
  double inv_n_;
};

// f(b) with optional derivatives; returns false when the value is not finite.
using ObjectiveFn =
    std::function<bool(const Eigen::VectorXd&, const EvalRequest&, double*, Eigen::VectorXd*,
                       Eigen::MatrixXd*)>;

struct NewtonOutcome {
  Eigen::VectorXd beta;
  double loss = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool flat_direction = false;
  std::vector<double> trace;
};

NewtonOutcome newton_minimize(const ObjectiveFn& f, int p, const NewtonOptions& opts,
                              const std::string& context) {
  NewtonOutcome out;
  Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
  double loss;
  Eigen::VectorXd g(p);
  Eigen::MatrixXd H(p, p);
  if (!f(b, {true, true}, &loss, &g, &H))
    throw EstimationError(context + ": objective not finite at the origin");
  out.trace.push_back(loss);

  auto rank_deficient = [&](const Eigen::MatrixXd& M) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(M);
    const double emax = eig.eigenvalues().cwiseAbs().maxCoeff();
    return emax <= 0.0 || eig.eigenvalues().minCoeff() < emax * kSingularRcond;
  };

  for (int it = 0; it < opts.max_iter; ++it) {
    if (g.cwiseAbs().maxCoeff() < opts.tol) {
      out.flat_direction = rank_deficient(H);
      break;
    }
    // Newton direction through the eigendecomposition; rank-deficient blocks
    // fall back to the minimum-norm direction.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(H);
    const double emax = eig.eigenvalues().cwiseAbs().maxCoeff();
    Eigen::VectorXd d;
    if (emax <= 0.0) {
      d = -g;  // no curvature information at all
      out.flat_direction = true;
    } else {
      const double cutoff = emax * kSingularRcond;
      Eigen::VectorXd inv = eig.eigenvalues();
      bool deficient = false;
      for (int i = 0; i < p; ++i) {
        if (inv[i] > cutoff) {
          inv[i] = 1.0 / inv[i];
        } else {
          inv[i] = 0.0;
          deficient = true;
        }
      }
      out.flat_direction = out.flat_direction || deficient;
      d = -(eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose() * g);
    }
    double slope = g.dot(d);
    if (slope >= 0.0) {
      d = -g;
      slope = g.dot(d);
      if (slope == 0.0) break;
    }

    double step = 1.0;
    double new_loss = kInf;
    Eigen::VectorXd b_try;
    bool accepted = false;
    while (step >= 1e-16) {
      b_try = b + step * d;
      double l_try;
      if (f(b_try, {false, false}, &l_try, nullptr, nullptr) &&
          l_try <= loss + 1e-4 * step * slope) {
        new_loss = l_try;
        accepted = true;
        break;
      }
      step /= 2.0;
    }
    if (!accepted) {
      if (g.cwiseAbs().maxCoeff() < 1e-6) break;  // at numerical floor, close enough
      throw EstimationError(context + ": line search failed");
    }
    b = b_try;
    const double rel_change = std::abs(loss - new_loss) / std::max(1.0, std::abs(loss));
    loss = new_loss;
    out.trace.push_back(loss);
    out.iterations = it + 1;
    if (b.cwiseAbs().maxCoeff() > opts.divergence_norm)
      throw EstimationError(context + ": monotone likelihood suspected (|beta| > " +
                            std::to_string(opts.divergence_norm) + ")");
    if (!f(b, {true, true}, &loss, &g, &H))
      throw EstimationError(context + ": objective not finite");
    if (g.cwiseAbs().maxCoeff() < opts.tol && rel_change < opts.rel_tol) {
      out.flat_direction = out.flat_direction || rank_deficient(H);
      break;
    }
    if (it + 1 == opts.max_iter)
      throw EstimationError(context + ": Newton did not converge in " +
                            std::to_string(opts.max_iter) + " iterations");
  }
  if (b.cwiseAbs().maxCoeff() > opts.separation_norm)
    throw EstimationError(context + ": monotone likelihood suspected (converged with |beta| > " +
                          std::to_string(opts.separation_norm) + ")");
  out.beta = b;
  out.loss = loss;
  out.grad_norm = g.cwiseAbs().maxCoeff();
  return out;
}

void check_dims(const StratifiedDesign& design, const Dataset& data, const CoefMatrix& beta) {
  if (design.n != data.n() || design.p != data.p || design.B != data.B)
    throw std::invalid_argument("design was not built from this dataset");
  if (beta.rows() != design.p || beta.cols() != design.B)
    throw std::invalid_argument("coefficient matrix has wrong dimensions");
}

}  // namespace

double neg_partial_loglik(const StratifiedDesign& design, const Dataset& data,
                          const CoefMatrix& beta) {
  check_dims(design, data, beta);
  double total = 0.0;
  for (int s = 0; s < design.B; ++s) {
    StratumEvaluator ev(design.strata[s], design.X, design.n);
    double loss;
    if (!ev.evaluate(beta.col(s), {false, false}, &loss, nullptr, nullptr)) return kInf;
    total += loss;
  }
  return total;
}

MultDerivatives gradient_and_hessian(const StratifiedDesign& design, const Dataset& data,
                                     const CoefMatrix& beta) {
  check_dims(design, data, beta);
  MultDerivatives d;
  d.gradient.resize(design.p, design.B);
  d.hessian.assign(design.B, Eigen::MatrixXd::Zero(design.p, design.p));
  for (int s = 0; s < design.B; ++s) {
    StratumEvaluator ev(design.strata[s], design.X, design.n);
    double loss;
    Eigen::VectorXd g(design.p);
    if (!ev.evaluate(beta.col(s), {true, true}, &loss, &g, &d.hessian[s]))
      throw EstimationError("partial likelihood not finite at the supplied beta");
    d.gradient.col(s) = g;
  }
  return d;
}

bool loss_and_gradient(const StratifiedDesign& design, const Dataset& data,
                       const CoefMatrix& beta, double* loss, CoefMatrix* grad) {
  check_dims(design, data, beta);
  grad->resize(design.p, design.B);
  *loss = 0.0;
  for (int s = 0; s < design.B; ++s) {
    StratumEvaluator ev(design.strata[s], design.X, design.n);
    double ls;
    Eigen::VectorXd g(design.p);
    if (!ev.evaluate(beta.col(s), {true, false}, &ls, &g, nullptr)) return false;
    *loss += ls;
    grad->col(s) = g;
  }
  return true;
}

double neg_partial_loglik_pooled(const StratifiedDesign& design, const Dataset& data,
                                 const Eigen::VectorXd& beta) {
  check_dims(design, data, CoefMatrix::Zero(design.p, design.B));
  if (beta.size() != design.p) throw std::invalid_argument("beta has wrong dimension");
  StratumEvaluator ev(design.pooled, design.X, design.n);
  double loss;
  if (!ev.evaluate(beta, {false, false}, &loss, nullptr, nullptr)) return kInf;
  return loss;
}

FitResult fit_unconstrained_mult(const StratifiedDesign& design, const Dataset& data,
                                 const NewtonOptions& opts) {
  check_dims(design, data, CoefMatrix::Zero(design.p, design.B));
  for (int s = 0; s < design.B; ++s)
    if (design.strata[s].event_count == 0)
      throw EstimationError("stratum " + std::to_string(s + 1) +
                            " has no events: unidentifiable");
  FitResult fit;
  fit.kind = EstimatorKind::unconstrained;
  fit.beta.resize(design.p, design.B);
  for (int s = 0; s < design.B; ++s) {
    const auto& st = design.strata[s];
    const std::string ctx = "stratum " + std::to_string(s + 1);
    StratumEvaluator ev(st, design.X, design.n);
    auto fn = [&](const Eigen::VectorXd& b, const EvalRequest& req, double* l,
                  Eigen::VectorXd* g, Eigen::MatrixXd* H) { return ev.evaluate(b, req, l, g, H); };
    NewtonOutcome res = newton_minimize(fn, design.p, opts, ctx);
    fit.beta.col(s) = res.beta;
    fit.iterations = std::max(fit.iterations, res.iterations);
    fit.kkt_residual = std::max(fit.kkt_residual, res.grad_norm);
    if (res.flat_direction) fit.warnings.push_back("flat direction in " + ctx);
  }
  return fit;
}

namespace {

FitResult fit_single_system(const StratifiedDesign& design, const ObjectiveFn& fn,
                            const NewtonOptions& opts, const std::string& ctx) {
  NewtonOutcome res = newton_minimize(fn, design.p, opts, ctx);
  FitResult fit;
  fit.kind = EstimatorKind::constant;
  fit.beta = res.beta.replicate(1, design.B);
  fit.iterations = res.iterations;
  fit.kkt_residual = res.grad_norm;
  fit.objective_trace = std::move(res.trace);
  if (res.flat_direction) fit.warnings.push_back("flat direction in " + ctx);
  return fit;
}

}  // namespace

FitResult fit_constant_mult(const StratifiedDesign& design, const Dataset& data,
                            const NewtonOptions& opts) {
  check_dims(design, data, CoefMatrix::Zero(design.p, design.B));
  if (design.pooled.event_count == 0)
    throw EstimationError("constant fit: no events observed");
  StratumEvaluator ev(design.pooled, design.X, design.n);
  auto fn = [&](const Eigen::VectorXd& b, const EvalRequest& req, double* l, Eigen::VectorXd* g,
                Eigen::MatrixXd* H) { return ev.evaluate(b, req, l, g, H); };
  return fit_single_system(design, fn, opts, "pooled partial likelihood");
}

FitResult fit_common_stratified_mult(const StratifiedDesign& design, const Dataset& data,
                                     const NewtonOptions& opts) {
  check_dims(design, data, CoefMatrix::Zero(design.p, design.B));
  long events = 0;
  for (const auto& st : design.strata) events += st.event_count;
  if (events == 0) throw EstimationError("common stratified fit: no events observed");
  std::vector<StratumEvaluator> evals;
  evals.reserve(design.B);
  for (int s = 0; s < design.B; ++s) evals.emplace_back(design.strata[s], design.X, design.n);
  auto fn = [&](const Eigen::VectorXd& b, const EvalRequest& req, double* l, Eigen::VectorXd* g,
                Eigen::MatrixXd* H) {
    *l = 0.0;
    if (req.grad) g->setZero(design.p);
    if (req.hess) H->setZero(design.p, design.p);
    double ls;
    Eigen::VectorXd gs(design.p);
    Eigen::MatrixXd Hs(design.p, design.p);
    for (auto& ev : evals) {
      if (!ev.evaluate(b, req, &ls, req.grad ? &gs : nullptr, req.hess ? &Hs : nullptr))
        return false;
      *l += ls;
      if (req.grad) *g += gs;
      if (req.hess) *H += Hs;
    }
    return true;
  };
  return fit_single_system(design, fn, opts, "common stratified partial likelihood");
}

}  // namespace esrm
