#include "esrm/additive.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace esrm {

BaselineSpec parse_baseline(const std::string& text) {
  const auto colon = text.find(':');
  const std::string fam = text.substr(0, colon);
  BaselineSpec b;
  if (fam == "weibull") b.family = BaselineSpec::Family::weibull;
  else if (fam == "gompertz") b.family = BaselineSpec::Family::gompertz;
  else throw std::invalid_argument("unknown baseline family: " + fam);
  if (colon != std::string::npos) {
    try {
      b.shape = std::stod(text.substr(colon + 1));
    } catch (const std::exception&) {
      throw std::invalid_argument("malformed baseline shape in '" + text + "'");
    }
  }
  b.validate();
  return b;
}

namespace {

// Walks the maximal segments (a, b] on which the stratum risk set is constant.
// visit(a, b, members, sum1) with members = indices at risk, sum1 = sum of X rows.
template <class Visitor>
void sweep_segments(const StratumDesign& st, const Eigen::MatrixXd& X, Visitor&& visit) {
  const size_t m = st.intervals.size();
  if (m == 0) return;
  std::vector<int> by_start(m), by_end(m);
  std::iota(by_start.begin(), by_start.end(), 0);
  std::iota(by_end.begin(), by_end.end(), 0);
  std::sort(by_start.begin(), by_start.end(), [&](int a, int b) {
    return st.intervals[a].start < st.intervals[b].start;
  });
  std::sort(by_end.begin(), by_end.end(),
            [&](int a, int b) { return st.intervals[a].end < st.intervals[b].end; });

  std::vector<double> points;
  points.reserve(2 * m);
  for (const auto& iv : st.intervals) {
    points.push_back(iv.start);
    points.push_back(iv.end);
  }
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());

  const int p = static_cast<int>(X.cols());
  std::vector<char> active(X.rows(), 0);
  std::vector<int> members;
  Eigen::VectorXd sum1 = Eigen::VectorXd::Zero(p);
  size_t ei = 0, xi = 0;
  for (size_t k = 0; k < points.size(); ++k) {
    const double c = points[k];
    while (xi < m && st.intervals[by_end[xi]].end == c) {
      const int subj = st.intervals[by_end[xi]].subject;
      active[subj] = 0;
      sum1 -= X.row(subj).transpose();
      ++xi;
    }
    while (ei < m && st.intervals[by_start[ei]].start == c) {
      const int subj = st.intervals[by_start[ei]].subject;
      active[subj] = 1;
      sum1 += X.row(subj).transpose();
      ++ei;
    }
    if (k + 1 == points.size()) break;
    members.clear();
    for (size_t j = 0; j < m; ++j) {
      const int subj = st.intervals[j].subject;
      if (active[subj]) members.push_back(subj);
    }
    if (!members.empty()) visit(c, points[k + 1], members, sum1);
  }
}

Eigen::VectorXd risk_mean(const Eigen::MatrixXd& X, const std::vector<int>& risk) {
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(X.cols());
  for (int j : risk) mean += X.row(j).transpose();
  return mean / static_cast<double>(risk.size());
}

}  // namespace

AdditiveSystem assemble_additive(const StratifiedDesign& design, const Dataset& data) {
  if (design.n != data.n() || design.p != data.p || design.B != data.B)
    throw std::invalid_argument("design was not built from this dataset");
  AdditiveSystem sys;
  sys.n = design.n;
  sys.p = design.p;
  sys.H.assign(design.B, Eigen::MatrixXd::Zero(design.p, design.p));
  sys.h.assign(design.B, Eigen::VectorXd::Zero(design.p));
  sys.empty_stratum.assign(design.B, false);
  const double inv_n = 1.0 / static_cast<double>(design.n);

  for (int s = 0; s < design.B; ++s) {
    const auto& st = design.strata[s];
    if (st.empty) {
      sys.empty_stratum[s] = true;
      continue;
    }
    Eigen::MatrixXd& H = sys.H[s];
    sweep_segments(st, design.X,
                   [&](double a, double b, const std::vector<int>& members,
                       const Eigen::VectorXd& sum1) {
                     const double len = b - a;
                     const double cnt = static_cast<double>(members.size());
                     Eigen::MatrixXd sum2 = Eigen::MatrixXd::Zero(design.p, design.p);
                     for (int i : members)
                       sum2.noalias() += design.X.row(i).transpose() * design.X.row(i);
                     H.noalias() += len * (sum2 - sum1 * sum1.transpose() / cnt);
                   });
    H *= inv_n;
    H = ((H + H.transpose()) / 2.0).eval();  // enforce exact symmetry
    Eigen::VectorXd& h = sys.h[s];
    for (const auto& blk : st.blocks) {
      const Eigen::VectorXd xbar = risk_mean(design.X, blk.risk);
      for (int i : blk.cases) h += design.X.row(i).transpose() - xbar;
    }
    h *= inv_n;
  }
  return sys;
}

double additive_loss(const AdditiveSystem& sys, const CoefMatrix& beta) {
  if (beta.rows() != sys.p || beta.cols() != sys.B())
    throw std::invalid_argument("coefficient matrix has wrong dimensions");
  double loss = 0.0;
  for (int s = 0; s < sys.B(); ++s) {
    const Eigen::VectorXd b = beta.col(s);
    loss += b.dot(sys.H[s] * b) - 2.0 * sys.h[s].dot(b);
  }
  return loss;
}

CoefMatrix additive_gradient(const AdditiveSystem& sys, const CoefMatrix& beta) {
  CoefMatrix g(sys.p, sys.B());
  for (int s = 0; s < sys.B(); ++s) g.col(s) = 2.0 * (sys.H[s] * beta.col(s) - sys.h[s]);
  return g;
}

namespace {

constexpr double kSingularRcond = 1e-12;

// Solves H x = h through the eigendecomposition; reports rank deficiency.
Eigen::VectorXd solve_psd(const Eigen::MatrixXd& H, const Eigen::VectorXd& h, bool pseudo,
                          bool* deficient) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(H);
  const Eigen::VectorXd& ev = eig.eigenvalues();
  const double emax = ev.cwiseAbs().maxCoeff();
  const double cutoff = emax * kSingularRcond;
  *deficient = (emax <= 0.0) || (ev.minCoeff() < cutoff);
  if (*deficient && !pseudo) return Eigen::VectorXd();
  Eigen::VectorXd inv = ev;
  for (int i = 0; i < inv.size(); ++i) inv[i] = ev[i] > cutoff ? 1.0 / ev[i] : 0.0;
  return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose() * h;
}

}  // namespace

FitResult fit_unconstrained_additive(const AdditiveSystem& sys, bool pseudo_inverse_fallback) {
  FitResult fit;
  fit.kind = EstimatorKind::unconstrained;
  fit.beta.resize(sys.p, sys.B());
  for (int s = 0; s < sys.B(); ++s) {
    bool deficient = false;
    Eigen::VectorXd b = solve_psd(sys.H[s], sys.h[s], pseudo_inverse_fallback, &deficient);
    if (deficient) {
      if (!pseudo_inverse_fallback)
        throw EstimationError("stratum " + std::to_string(s + 1) +
                              " unidentifiable: singular or empty H_n(s)");
      fit.warnings.push_back("stratum " + std::to_string(s + 1) +
                             ": pseudo-inverse used (singular H)");
    }
    fit.beta.col(s) = b;
  }
  fit.kkt_residual = additive_gradient(sys, fit.beta).cwiseAbs().maxCoeff();
  return fit;
}

FitResult fit_constant_additive(const AdditiveSystem& sys) {
  Eigen::MatrixXd Hp = Eigen::MatrixXd::Zero(sys.p, sys.p);
  Eigen::VectorXd hp = Eigen::VectorXd::Zero(sys.p);
  for (int s = 0; s < sys.B(); ++s) {
    Hp += sys.H[s];
    hp += sys.h[s];
  }
  bool deficient = false;
  Eigen::VectorXd b = solve_psd(Hp, hp, false, &deficient);
  if (deficient) throw EstimationError("constant additive fit: pooled H matrix is singular");
  FitResult fit;
  fit.kind = EstimatorKind::constant;
  fit.beta = b.replicate(1, sys.B());
  fit.kkt_residual = (2.0 * (Hp * b - hp)).cwiseAbs().maxCoeff();
  return fit;
}

std::vector<Eigen::VectorXd> score_residual_diag(const StratifiedDesign& design,
                                                 const Dataset& data, const CoefMatrix& beta0,
                                                 const BaselineSpec& baseline) {
  baseline.validate();
  if (design.n != data.n() || design.p != data.p)
    throw std::invalid_argument("design was not built from this dataset");
  if (beta0.rows() != design.p || beta0.cols() != design.B)
    throw std::invalid_argument("beta0 has wrong dimensions");
  const double inv_n = 1.0 / static_cast<double>(design.n);
  std::vector<Eigen::VectorXd> Z(design.B, Eigen::VectorXd::Zero(design.p));

  for (int s = 0; s < design.B; ++s) {
    Eigen::VectorXd z = Eigen::VectorXd::Zero(design.p);
    const auto& st = design.strata[s];
    for (const auto& blk : st.blocks) {
      const Eigen::VectorXd xbar = risk_mean(design.X, blk.risk);
      for (int i : blk.cases) z += design.X.row(i).transpose() - xbar;
    }
    // compensator: per subject, int (X_i - Xbar) * (alpha0(t) + X_i beta0(s)) dt
    sweep_segments(st, design.X,
                   [&](double a, double b, const std::vector<int>& members,
                       const Eigen::VectorXd& sum1) {
                     const double dA = baseline.cum_hazard(b) - baseline.cum_hazard(a);
                     const double dt = b - a;
                     const Eigen::VectorXd xbar = sum1 / static_cast<double>(members.size());
                     for (int i : members) {
                       const double rate_i = design.X.row(i).dot(beta0.col(s));
                       z -= (design.X.row(i).transpose() - xbar) * (dA + dt * rate_i);
                     }
                   });
    Z[s] = z * inv_n;
  }
  return Z;
}

}  // namespace esrm
