#include "esrm/penalty.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace esrm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void validate_config(const PenaltyConfig& cfg) {
  if (!(cfg.lambda >= 0.0) || !std::isfinite(cfg.lambda))
    throw std::invalid_argument("lambda must be finite and nonnegative");
  if (!(cfg.fuse_tol > 0.0)) throw std::invalid_argument("fuse_tol must be positive");
}

Eigen::MatrixXd resolve_weights(const PenaltyConfig& cfg, int p, int B) {
  if (cfg.weights.size() == 0) return Eigen::MatrixXd::Ones(p, std::max(B - 1, 0));
  if (cfg.weights.rows() != p || cfg.weights.cols() != B - 1)
    throw std::invalid_argument("penalty weights must be p x (B-1)");
  if ((cfg.weights.array() < 0.0).any())
    throw std::invalid_argument("penalty weights must be nonnegative");
  return cfg.weights;
}

// Per-coordinate thresholds (lambda/n) * w; column 0 (the free level) is 0.
Eigen::MatrixXd threshold_matrix(const PenaltyConfig& cfg, const Eigen::MatrixXd& W, int n) {
  const int p = static_cast<int>(W.rows());
  const int B = static_cast<int>(W.cols()) + 1;
  Eigen::MatrixXd pen = Eigen::MatrixXd::Zero(p, B);
  pen.rightCols(B - 1) = (cfg.lambda / static_cast<double>(n)) * W;
  return pen;
}

struct KktResiduals {
  double free = 0.0;       // max |gradient| over zero-threshold coordinates
  double penalized = 0.0;  // max subgradient violation over thresholded ones
};

// grad_gamma = row-wise suffix sums of the beta gradient.
Eigen::MatrixXd to_gamma_gradient(const CoefMatrix& grad_beta) {
  Eigen::MatrixXd g = grad_beta;
  for (Eigen::Index k = g.cols() - 2; k >= 0; --k) g.col(k) += g.col(k + 1);
  return g;
}

KktResiduals kkt_residuals(const Eigen::MatrixXd& gamma, const Eigen::MatrixXd& grad_gamma,
                           const Eigen::MatrixXd& pen) {
  KktResiduals r;
  for (Eigen::Index j = 0; j < gamma.rows(); ++j) {
    for (Eigen::Index k = 0; k < gamma.cols(); ++k) {
      const double g = grad_gamma(j, k);
      const double t = pen(j, k);
      if (t == 0.0) {
        r.free = std::max(r.free, std::abs(g));
      } else if (gamma(j, k) != 0.0) {
        r.penalized = std::max(r.penalized, std::abs(g + t * (gamma(j, k) > 0 ? 1.0 : -1.0)));
      } else {
        r.penalized = std::max(r.penalized, std::max(0.0, std::abs(g) - t));
      }
    }
  }
  return r;
}

std::string residual_report(const KktResiduals& r) {
  std::ostringstream os;
  os << "free residual " << r.free << ", penalized residual " << r.penalized;
  return os.str();
}

}  // namespace

CoefMatrix reparam_to_increments(const CoefMatrix& beta) {
  CoefMatrix gamma = beta;
  for (Eigen::Index k = gamma.cols() - 1; k >= 1; --k) gamma.col(k) -= beta.col(k - 1);
  return gamma;
}

CoefMatrix reparam_from_increments(const CoefMatrix& gamma) {
  CoefMatrix beta = gamma;
  for (Eigen::Index k = 1; k < beta.cols(); ++k) beta.col(k) += beta.col(k - 1);
  return beta;
}

double soft_threshold(double x, double t) {
  if (x > t) return x - t;
  if (x < -t) return x + t;
  return 0.0;
}

std::vector<bool> detect_nonconstant(const CoefMatrix& beta, double fuse_tol) {
  std::vector<bool> flags(beta.rows());
  for (Eigen::Index j = 0; j < beta.rows(); ++j) flags[j] = tv(beta.row(j)) > fuse_tol;
  return flags;
}

// ---------------------------------------------------------------------------
// Additive model: cyclic coordinate descent with exact soft-threshold steps
// ---------------------------------------------------------------------------

FitResult fit_tv_additive(const AdditiveSystem& sys, const PenaltyConfig& cfg,
                          const CoefMatrix* warm_start) {
  validate_config(cfg);
  const int p = sys.p;
  const int B = sys.B();
  const int n = sys.n;
  const Eigen::MatrixXd W = resolve_weights(cfg, p, B);
  const Eigen::MatrixXd pen = threshold_matrix(cfg, W, n);

  if (cfg.lambda > 0.0) {
    Eigen::MatrixXd Hp = Eigen::MatrixXd::Zero(p, p);
    for (const auto& H : sys.H) Hp += H;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Hp);
    const double emax = eig.eigenvalues().cwiseAbs().maxCoeff();
    if (emax <= 0.0 || eig.eigenvalues().minCoeff() < emax * 1e-12)
      throw EstimationError("tv additive fit: pooled H matrix is singular");
  }

  CoefMatrix gamma = warm_start && warm_start->size() > 0 ? reparam_to_increments(*warm_start)
                                                          : CoefMatrix::Zero(p, B);
  if (gamma.rows() != p || gamma.cols() != B)
    throw std::invalid_argument("warm start has wrong dimensions");
  CoefMatrix beta = reparam_from_increments(gamma);
  std::vector<Eigen::VectorXd> Hbeta(B);
  for (int s = 0; s < B; ++s) Hbeta[s] = sys.H[s] * beta.col(s);

  // curvature of the loss along gamma(j,k): 2 * sum_{s>=k} H[s](j,j)
  Eigen::MatrixXd curv(p, B);
  for (int j = 0; j < p; ++j) {
    double acc = 0.0;
    for (int k = B - 1; k >= 0; --k) {
      acc += sys.H[k](j, j);
      curv(j, k) = acc;
    }
  }

  const double lam_scale = std::max(1.0, cfg.lambda / n);
  const double exit_free = 0.25 * cfg.kkt_tol_free;
  const double exit_pen = 0.25 * cfg.kkt_tol_penalized * lam_scale;

  FitResult fit;
  fit.kind = EstimatorKind::tv;
  fit.lambda = cfg.lambda;

  auto objective = [&]() {
    double v = 0.0;
    for (int s = 0; s < B; ++s)
      v += beta.col(s).dot(Hbeta[s]) - 2.0 * sys.h[s].dot(beta.col(s));
    for (int j = 0; j < p; ++j)
      for (int k = 1; k < B; ++k) v += pen(j, k) * std::abs(gamma(j, k));
    return v;
  };
  fit.objective_trace.push_back(objective());

  KktResiduals res;
  int kkt_ok_streak = 0;
  bool converged = false;
  int sweep = 0;
  for (; sweep < cfg.max_iter; ++sweep) {
    double max_delta = 0.0;
    for (int j = 0; j < p; ++j) {
      for (int k = 0; k < B; ++k) {
        const double a = curv(j, k);
        double c = 0.0;
        for (int s = k; s < B; ++s) c += 2.0 * (Hbeta[s][j] - sys.h[s][j]);
        const double old = gamma(j, k);
        double next;
        if (a <= 0.0) {
          next = k == 0 ? old : 0.0;  // coordinate absent from the loss
        } else {
          const double u = old - c / (2.0 * a);
          next = k == 0 ? u : soft_threshold(u, pen(j, k) / (2.0 * a));
        }
        if (next != old) {
          const double delta = next - old;
          gamma(j, k) = next;
          max_delta = std::max(max_delta, std::abs(delta));
          for (int s = k; s < B; ++s) {
            beta(j, s) += delta;
            Hbeta[s] += delta * sys.H[s].col(j);
          }
        }
      }
    }
    // canonical state: beta as the exact cumulative sum of gamma (fused
    // coordinates then difference back to exact zeros), Hbeta recomputed
    beta = reparam_from_increments(gamma);
    for (int s = 0; s < B; ++s) Hbeta[s] = sys.H[s] * beta.col(s);
    fit.objective_trace.push_back(objective());

    Eigen::MatrixXd grad_beta(p, B);
    for (int s = 0; s < B; ++s) grad_beta.col(s) = 2.0 * (Hbeta[s] - sys.h[s]);
    res = kkt_residuals(gamma, to_gamma_gradient(grad_beta), pen);
    const bool kkt_ok = res.free <= exit_free && res.penalized <= exit_pen;
    kkt_ok_streak = kkt_ok ? kkt_ok_streak + 1 : 0;
    const bool stalled = max_delta <= 1e-13 * std::max(1.0, gamma.cwiseAbs().maxCoeff());
    if (kkt_ok && (stalled || kkt_ok_streak > 200)) {
      converged = true;
      break;
    }
  }
  if (!converged)
    throw EstimationError("tv additive fit did not converge in " + std::to_string(cfg.max_iter) +
                          " sweeps: " + residual_report(res));
  fit.beta = beta;
  fit.iterations = sweep + 1;
  fit.kkt_residual = std::max(res.free, res.penalized);
  return fit;
}

// ---------------------------------------------------------------------------
// Multiplicative model: accelerated proximal gradient with backtracking and
// objective-increase restarts
// ---------------------------------------------------------------------------

FitResult fit_tv_mult(const StratifiedDesign& design, const Dataset& data,
                      const PenaltyConfig& cfg, const CoefMatrix* warm_start) {
  validate_config(cfg);
  const int p = design.p;
  const int B = design.B;
  const int n = design.n;
  const Eigen::MatrixXd W = resolve_weights(cfg, p, B);
  const Eigen::MatrixXd pen = threshold_matrix(cfg, W, n);
  if (design.pooled.event_count == 0) throw EstimationError("tv mult fit: no events observed");

  const double lam_scale = std::max(1.0, cfg.lambda / n);
  const double exit_free = cfg.kkt_tol_free;
  const double exit_pen = cfg.kkt_tol_penalized * lam_scale;

  auto smooth = [&](const CoefMatrix& gamma) {
    return neg_partial_loglik(design, data, reparam_from_increments(gamma));
  };
  auto smooth_grad = [&](const CoefMatrix& gamma, double* f, Eigen::MatrixXd* g) {
    CoefMatrix grad_beta;
    if (!loss_and_gradient(design, data, reparam_from_increments(gamma), f, &grad_beta))
      return false;
    *g = to_gamma_gradient(grad_beta);
    return true;
  };
  auto pen_value = [&](const CoefMatrix& gamma) {
    double v = 0.0;
    for (int j = 0; j < p; ++j)
      for (int k = 1; k < B; ++k) v += pen(j, k) * std::abs(gamma(j, k));
    return v;
  };
  auto prox = [&](const CoefMatrix& v, double step) {
    CoefMatrix out = v;
    for (int j = 0; j < p; ++j)
      for (int k = 1; k < B; ++k) out(j, k) = soft_threshold(v(j, k), step * pen(j, k));
    return out;
  };

  CoefMatrix gamma = warm_start && warm_start->size() > 0 ? reparam_to_increments(*warm_start)
                                                          : CoefMatrix::Zero(p, B);
  if (gamma.rows() != p || gamma.cols() != B)
    throw std::invalid_argument("warm start has wrong dimensions");

  // Newton refinement of the fusion pattern found by the proximal iterations:
  // with the zero set fixed, the objective restricted to the active
  // coordinates is smooth (penalty terms become linear), so a few damped
  // Newton steps drive the stationarity residual to machine precision. The
  // step is rejected if any active penalized coordinate would flip sign.
  auto polish_pattern = [&](CoefMatrix* gamma_io, double* F_io) {
    struct Coord {
      int j, k;
      double sign;
    };
    std::vector<Coord> active;
    for (int j = 0; j < p; ++j) {
      active.push_back({j, 0, 0.0});
      for (int k = 1; k < B; ++k)
        if ((*gamma_io)(j, k) != 0.0)
          active.push_back({j, k, (*gamma_io)(j, k) > 0 ? 1.0 : -1.0});
    }
    const int m = static_cast<int>(active.size());
    for (int it = 0; it < 12; ++it) {
      double f;
      CoefMatrix grad_beta;
      if (!loss_and_gradient(design, data, reparam_from_increments(*gamma_io), &f, &grad_beta))
        return;
      const Eigen::MatrixXd gg = to_gamma_gradient(grad_beta);
      Eigen::VectorXd gr(m);
      for (int a = 0; a < m; ++a)
        gr[a] = gg(active[a].j, active[a].k) + pen(active[a].j, active[a].k) * active[a].sign;
      if (gr.cwiseAbs().maxCoeff() < 1e-13) break;

      const MultDerivatives d =
          gradient_and_hessian(design, data, reparam_from_increments(*gamma_io));
      Eigen::MatrixXd Hr(m, m);
      for (int a = 0; a < m; ++a) {
        for (int b = 0; b < m; ++b) {
          double acc = 0.0;
          for (int s = std::max(active[a].k, active[b].k); s < B; ++s)
            acc += d.hessian[s](active[a].j, active[b].j);
          Hr(a, b) = acc;
        }
      }
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Hr);
      const double emax = eig.eigenvalues().cwiseAbs().maxCoeff();
      if (emax <= 0.0) return;
      Eigen::VectorXd inv = eig.eigenvalues();
      for (int a = 0; a < m; ++a) inv[a] = inv[a] > emax * 1e-12 ? 1.0 / inv[a] : 0.0;
      Eigen::VectorXd dir =
          -(eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose() * gr);
      if (gr.dot(dir) >= 0.0) dir = -gr;

      double step = 1.0;
      bool accepted = false;
      while (step > 1e-14) {
        CoefMatrix cand = *gamma_io;
        bool sign_ok = true;
        for (int a = 0; a < m; ++a) {
          cand(active[a].j, active[a].k) += step * dir[a];
          if (active[a].sign != 0.0 &&
              cand(active[a].j, active[a].k) * active[a].sign < 0.0)
            sign_ok = false;
        }
        if (sign_ok) {
          const double Fc = smooth(cand) + pen_value(cand);
          if (std::isfinite(Fc) && Fc <= *F_io + 1e-12 * std::max(1.0, std::abs(*F_io))) {
            *gamma_io = cand;
            *F_io = std::min(*F_io, Fc);
            accepted = true;
            break;
          }
        }
        step /= 2.0;
      }
      if (!accepted) return;
    }
  };

  double F_cur = smooth(gamma) + pen_value(gamma);
  if (!std::isfinite(F_cur)) throw EstimationError("tv mult fit: objective not finite at start");

  FitResult fit;
  fit.kind = EstimatorKind::tv;
  fit.lambda = cfg.lambda;
  fit.objective_trace.push_back(F_cur);

  CoefMatrix y = gamma;
  double t = 1.0;
  double step = 1.0;
  int accepted = 0;
  int smooth_streak = 0;
  bool converged = false;
  KktResiduals res;

  auto exact_kkt = [&](const CoefMatrix& g_point, KktResiduals* out) {
    double f;
    Eigen::MatrixXd gg;
    if (!smooth_grad(g_point, &f, &gg)) return false;
    *out = kkt_residuals(g_point, gg, pen);
    return out->free <= exit_free && out->penalized <= exit_pen;
  };

  for (int it = 0; it < cfg.max_iter; ++it) {
    double fy;
    Eigen::MatrixXd gy;
    if (!smooth_grad(y, &fy, &gy)) {  // momentum overshot into a non-finite region
      y = gamma;
      t = 1.0;
      if (!smooth_grad(y, &fy, &gy))
        throw EstimationError("tv mult fit: gradient not finite at the current iterate");
    }

    CoefMatrix cand;
    double fc = kInf;
    bool backtracked = false;
    for (;;) {
      cand = prox(y - step * gy, step);
      fc = smooth(cand);
      const Eigen::MatrixXd diff = cand - y;
      const double rhs = fy + (gy.array() * diff.array()).sum() +
                         diff.squaredNorm() / (2.0 * step) + 1e-12 * std::max(1.0, std::abs(fy));
      if (std::isfinite(fc) && fc <= rhs) break;
      backtracked = true;
      step /= 2.0;
      if (step < 1e-18) {
        if (exact_kkt(gamma, &res)) {
          converged = true;
          break;
        }
        throw EstimationError("tv mult fit: backtracking step underflow; " +
                              residual_report(res));
      }
    }
    if (converged) break;
    smooth_streak = backtracked ? 0 : smooth_streak + 1;
    if (smooth_streak >= 8) {  // recover from an overly conservative step
      step = std::min(step * 2.0, 1e12);
      smooth_streak = 0;
    }

    const double F_new = fc + pen_value(cand);
    if (F_new > F_cur) {
      if ((y - gamma).cwiseAbs().maxCoeff() == 0.0) {
        // descent step from the current iterate failed to improve: tolerance floor
        if (exact_kkt(gamma, &res)) {
          converged = true;
          break;
        }
        step /= 2.0;
        if (step < 1e-18)
          throw EstimationError("tv mult fit stalled: " + residual_report(res));
        continue;
      }
      y = gamma;  // restart acceleration from the last accepted iterate
      t = 1.0;
      continue;
    }

    const CoefMatrix gamma_old = gamma;
    gamma = cand;
    const double F_prev = F_cur;
    F_cur = F_new;
    fit.objective_trace.push_back(F_cur);
    ++accepted;

    const CoefMatrix beta = reparam_from_increments(gamma);
    if (beta.cwiseAbs().maxCoeff() > 1e3)
      throw EstimationError(
          "tv mult fit: monotone likelihood suspected (|beta| > 1000); "
          "the partial likelihood may have no finite minimizer at this lambda");

    const double t_new = (1.0 + std::sqrt(1.0 + 4.0 * t * t)) / 2.0;
    y = gamma + ((t - 1.0) / t_new) * (gamma - gamma_old);
    t = t_new;

    const double rel = std::abs(F_prev - F_cur) / std::max(1.0, std::abs(F_cur));
    if (rel < cfg.rel_obj_tol && accepted % 5 == 0) {
      polish_pattern(&gamma, &F_cur);
      if (exact_kkt(gamma, &res)) {
        converged = true;
        break;
      }
      // the pattern was not yet optimal: restart the proximal iteration from
      // the polished point
      y = gamma;
      t = 1.0;
    }
  }
  if (!converged) {
    polish_pattern(&gamma, &F_cur);
    if (!exact_kkt(gamma, &res))
      throw EstimationError("tv mult fit did not converge in " + std::to_string(cfg.max_iter) +
                            " iterations: " + residual_report(res));
  }

  fit.beta = reparam_from_increments(gamma);
  if (fit.beta.cwiseAbs().maxCoeff() > cfg.separation_norm)
    throw EstimationError(
        "tv mult fit: monotone likelihood suspected (converged with |beta| > " +
        std::to_string(cfg.separation_norm) + "); lambda may be too small");
  fit.iterations = accepted;
  fit.kkt_residual = std::max(res.free, res.penalized);
  return fit;
}

// ---------------------------------------------------------------------------
// Reweighted two-step
// ---------------------------------------------------------------------------

Eigen::MatrixXd reweighting_weights(const CoefMatrix& beta1, double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
  const Eigen::Index p = beta1.rows();
  const Eigen::Index B = beta1.cols();
  Eigen::MatrixXd W(p, std::max<Eigen::Index>(B - 1, 0));
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index k = 1; k < B; ++k)
      W(j, k - 1) = 1.0 / (std::abs(beta1(j, k) - beta1(j, k - 1)) + epsilon);
  return W;
}

double default_reweight_epsilon(const CoefMatrix& beta1) {
  double range = 0.0;
  for (Eigen::Index j = 0; j < beta1.rows(); ++j)
    range = std::max(range, beta1.row(j).maxCoeff() - beta1.row(j).minCoeff());
  if (range == 0.0) range = 1.0;
  return 1e-4 * range;
}

FitResult reweighted_two_step(
    const FitResult& fit1, double epsilon,
    const std::function<FitResult(const Eigen::MatrixXd& weights)>& refit) {
  if (!fit1.converged) throw EstimationError("two-step fit requires a converged first step");
  FitResult fit2 = refit(reweighting_weights(fit1.beta, epsilon));
  fit2.kind = EstimatorKind::tv_two_step;
  return fit2;
}

// ---------------------------------------------------------------------------
// Lambda selection
// ---------------------------------------------------------------------------

namespace {

FitResult fit_tv_any(ModelKind model, const Dataset& data, const StratifiedDesign& design,
                     const AdditiveSystem* sys, const PenaltyConfig& cfg,
                     const CoefMatrix* warm) {
  if (model == ModelKind::additive) return fit_tv_additive(*sys, cfg, warm);
  return fit_tv_mult(design, data, cfg, warm);
}

bool fully_fused(const FitResult& fit, double fuse_tol) {
  const CoefMatrix gamma = reparam_to_increments(fit.beta);
  if (gamma.cols() < 2) return true;
  return gamma.rightCols(gamma.cols() - 1).cwiseAbs().maxCoeff() <= fuse_tol;
}

Dataset subset_dataset(const Dataset& data, int folds, int fold, bool keep_fold) {
  Dataset out;
  out.p = data.p;
  out.B = data.B;
  out.tau = data.tau;
  out.covariate_names = data.covariate_names;
  for (int i = 0; i < data.n(); ++i)
    if ((i % folds == fold) == keep_fold) out.subjects.push_back(data.subjects[i]);
  return out;
}

bool has_empty_training_stratum(ModelKind model, const StratifiedDesign& design,
                                const AdditiveSystem* sys) {
  if (model == ModelKind::additive) {
    for (bool e : sys->empty_stratum)
      if (e) return true;
    return false;
  }
  for (const auto& st : design.strata)
    if (st.event_count == 0) return true;
  return false;
}

}  // namespace

std::vector<double> default_lambda_grid(const Dataset& data, ModelKind model,
                                        const PenaltyConfig& base, int size) {
  if (size < 2) throw std::invalid_argument("grid size must be >= 2");
  const StratifiedDesign design = build_design(data);
  AdditiveSystem sys;
  if (model == ModelKind::additive) sys = assemble_additive(design, data);

  double grad_scale;
  if (model == ModelKind::additive) {
    grad_scale = additive_gradient(sys, CoefMatrix::Zero(data.p, data.B)).cwiseAbs().maxCoeff();
  } else {
    double f;
    CoefMatrix g;
    loss_and_gradient(design, data, CoefMatrix::Zero(data.p, data.B), &f, &g);
    grad_scale = g.cwiseAbs().maxCoeff();
  }

  auto fused_at = [&](double lambda) {
    PenaltyConfig cfg = base;
    cfg.lambda = lambda;
    return fully_fused(fit_tv_any(model, data, design, &sys, cfg, nullptr), base.fuse_tol);
  };

  double hi = data.n() * std::max(1.0, grad_scale);
  int guard = 0;
  while (!fused_at(hi)) {
    hi *= 2.0;
    if (++guard > 60) throw EstimationError("lambda_max search failed to fuse");
  }
  double lo = hi / 2.0;
  while (fused_at(lo)) {
    hi = lo;
    lo /= 2.0;
    if (++guard > 120) break;  // fused all the way down: keep current hi
  }
  while (hi / lo > 1.05) {
    const double mid = std::sqrt(hi * lo);
    if (fused_at(mid)) hi = mid;
    else lo = mid;
  }

  std::vector<double> grid(size);
  for (int k = 0; k < size; ++k) grid[k] = hi * std::pow(10.0, -3.0 * k / (size - 1));
  return grid;
}

LambdaSelection select_lambda(const Dataset& data, ModelKind model, std::vector<double> grid,
                              int folds, const PenaltyConfig& base) {
  if (folds < 2) throw std::invalid_argument("cross-validation needs at least 2 folds");
  if (grid.empty()) grid = default_lambda_grid(data, model, base);
  std::sort(grid.begin(), grid.end(), std::greater<double>());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  const int G = static_cast<int>(grid.size());

  LambdaSelection sel;
  sel.grid = grid;

  const StratifiedDesign design = build_design(data);
  AdditiveSystem sys;
  if (model == ModelKind::additive) sys = assemble_additive(design, data);

  // full-data path, warm-started from large to small lambda
  CoefMatrix warm;
  for (int g = 0; g < G; ++g) {
    PenaltyConfig cfg = base;
    cfg.lambda = grid[g];
    sel.path.push_back(fit_tv_any(model, data, design, &sys, cfg, g > 0 ? &warm : nullptr));
    warm = sel.path.back().beta;
  }

  std::vector<double> score_sum(G, 0.0);
  int evaluated = 0;
  for (int f = 0; f < folds; ++f) {
    const Dataset train = subset_dataset(data, folds, f, false);
    const Dataset test = subset_dataset(data, folds, f, true);
    if (train.subjects.empty() || test.subjects.empty()) {
      sel.warnings.push_back("fold " + std::to_string(f) + " skipped: empty split");
      continue;
    }
    try {
      const StratifiedDesign train_design = build_design(train);
      AdditiveSystem train_sys;
      if (model == ModelKind::additive) train_sys = assemble_additive(train_design, train);
      if (has_empty_training_stratum(model, train_design, &train_sys)) {
        sel.warnings.push_back("fold " + std::to_string(f) + " skipped: empty stratum");
        continue;
      }
      const StratifiedDesign test_design = build_design(test);
      AdditiveSystem test_sys;
      if (model == ModelKind::additive) test_sys = assemble_additive(test_design, test);

      std::vector<double> fold_scores(G);
      CoefMatrix fold_warm;
      for (int g = 0; g < G; ++g) {
        PenaltyConfig cfg = base;
        cfg.lambda = grid[g];
        const FitResult fit =
            fit_tv_any(model, train, train_design, &train_sys, cfg, g > 0 ? &fold_warm : nullptr);
        fold_scores[g] = model == ModelKind::additive
                             ? additive_loss(test_sys, fit.beta)
                             : neg_partial_loglik(test_design, test, fit.beta);
        fold_warm = fit.beta;
      }
      for (int g = 0; g < G; ++g) score_sum[g] += fold_scores[g];
      ++evaluated;
    } catch (const EstimationError& e) {
      sel.warnings.push_back("fold " + std::to_string(f) + " skipped: " + e.what());
    }
  }
  if (evaluated == 0) throw EstimationError("all cross-validation folds were skipped");
  sel.folds_evaluated = evaluated;
  sel.cv_mean.resize(G);
  for (int g = 0; g < G; ++g) sel.cv_mean[g] = score_sum[g] / evaluated;
  const int best =
      static_cast<int>(std::min_element(sel.cv_mean.begin(), sel.cv_mean.end()) -
                       sel.cv_mean.begin());
  sel.lambda = grid[best];
  return sel;
}

}  // namespace esrm
