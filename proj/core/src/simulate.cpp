#include "esrm/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace esrm {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

uint64_t derive_seed(uint64_t base, uint64_t tag, uint64_t index) {
  return splitmix64(splitmix64(base + splitmix64(tag)) + index);
}

void SimConfig::validate() const {
  if (n < 1) throw std::invalid_argument("n must be >= 1");
  if (B < 1) throw std::invalid_argument("B must be >= 1");
  if (beta0.size() == 0 || beta0.cols() != B)
    throw std::invalid_argument("beta0 must be p x B");
  if (!beta0.allFinite()) throw std::invalid_argument("beta0 must be finite");
  baseline.validate();
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
  if (!(thinning_window > 0.0)) throw std::invalid_argument("thinning window must be positive");
  if (!covariate_ranges.empty() && static_cast<int>(covariate_ranges.size()) != p())
    throw std::invalid_argument("covariate_ranges must have one entry per covariate");
  for (const auto& [lo, hi] : covariate_ranges)
    if (!(lo <= hi)) throw std::invalid_argument("covariate range with lo > hi");
  if (model == ModelKind::additive && !baseline.nondecreasing_hazard())
    throw std::invalid_argument(
        "additive sampler needs a nondecreasing baseline hazard (weibull shape >= 1)");
}

CoefMatrix make_beta0(double b1, double b2, double b3, int B) {
  if (B < 5) throw std::invalid_argument("the default beta0 pattern needs B >= 5");
  CoefMatrix beta = CoefMatrix::Zero(4, B);
  beta(0, 2) = b1;
  beta(0, 3) = b1;
  beta.row(1).setConstant(b2);
  for (int s = 0; s < B; ++s) beta(2, s) = b3 * (s + 1);
  return beta;
}

namespace {

// Shared prologue: covariates, death and censoring. The draw order
// (X_1..X_p, D, C, event stream) is fixed; it is part of the reproducibility
// contract and keeps subjects coupled across rate changes.
struct SubjectFrame {
  Eigen::VectorXd x;
  double follow_up;
  bool terminal;
};

SubjectFrame draw_frame(const SimConfig& cfg, Rng& rng) {
  SubjectFrame f;
  const int p = cfg.p();
  f.x.resize(p);
  for (int j = 0; j < p; ++j) {
    const auto range = cfg.covariate_ranges.empty() ? std::make_pair(0.0, 1.0)
                                                    : cfg.covariate_ranges[j];
    f.x[j] = rng.uniform_range(range.first, range.second);
  }
  const double death = cfg.death_rate > 0.0 ? rng.exponential(cfg.death_rate) : kInf;
  const double censor_raw = cfg.censor_rate > 0.0 ? rng.exponential(cfg.censor_rate) : kInf;
  const double censor = std::min(censor_raw, cfg.tau);
  f.follow_up = std::min(death, censor);
  f.terminal = death <= censor;
  return f;
}

}  // namespace

SubjectRecord simulate_subject_mult(const SimConfig& cfg, Rng& rng) {
  const SubjectFrame frame = draw_frame(cfg, rng);
  SubjectRecord subj;
  subj.covariates = frame.x;
  subj.follow_up = frame.follow_up;
  subj.terminal = frame.terminal;

  double t = 0.0;
  for (int s = 1; s <= cfg.B; ++s) {
    const double lin = frame.x.dot(cfg.beta0.col(s - 1));
    const double gap = rng.exponential(1.0) * std::exp(-lin);
    const double next = cfg.baseline.inv_cum_hazard(cfg.baseline.cum_hazard(t) + gap);
    if (!(next > t) || next > subj.follow_up) break;
    subj.event_times.push_back(next);
    t = next;
  }
  return subj;
}

SubjectRecord simulate_subject_add(const SimConfig& cfg, Rng& rng, SimStats* stats) {
  const SubjectFrame frame = draw_frame(cfg, rng);
  SubjectRecord subj;
  subj.covariates = frame.x;
  subj.follow_up = frame.follow_up;
  subj.terminal = frame.terminal;

  int s = 1;
  double t = 0.0;
  double lin = frame.x.dot(cfg.beta0.col(0));
  while (s <= cfg.B && t < subj.follow_up) {
    const double window_end = t + cfg.thinning_window;
    // alpha0 is nondecreasing, so this bounds the hazard on (t, window_end]
    const double bound = cfg.baseline.hazard(window_end) + std::max(0.0, lin);
    if (!std::isfinite(bound))
      throw std::overflow_error("additive sampler: baseline hazard overflow at t = " +
                                std::to_string(window_end));
    const double proposal = t + rng.exponential(bound);
    if (proposal > window_end) {
      t = window_end;
      continue;
    }
    if (proposal > subj.follow_up) break;
    const double raw = cfg.baseline.hazard(proposal) + lin;
    if (raw < 0.0 && stats != nullptr) ++stats->clamped_proposals;
    const double rate = std::max(0.0, raw);
    if (rng.uniform() * bound < rate) {
      subj.event_times.push_back(proposal);
      ++s;
      if (s <= cfg.B) lin = frame.x.dot(cfg.beta0.col(s - 1));
    }
    t = proposal;
  }
  return subj;
}

Dataset simulate_dataset(const SimConfig& cfg, SimStats* stats) {
  cfg.validate();
  Dataset data;
  data.p = cfg.p();
  data.B = cfg.B;
  data.tau = cfg.tau;
  for (int j = 0; j < data.p; ++j) data.covariate_names.push_back("x" + std::to_string(j + 1));
  data.subjects.reserve(cfg.n);
  for (int i = 0; i < cfg.n; ++i) {
    Rng rng(derive_seed(cfg.seed, kSubjectStream, static_cast<uint64_t>(i)));
    SubjectRecord subj = cfg.model == ModelKind::multiplicative
                             ? simulate_subject_mult(cfg, rng)
                             : simulate_subject_add(cfg, rng, stats);
    subj.id = std::to_string(i + 1);
    data.subjects.push_back(std::move(subj));
  }
  data.validate();
  return data;
}

double estimate_pobs(const SimConfig& cfg, int reps) {
  cfg.validate();
  if (reps < 1) throw std::invalid_argument("reps must be >= 1");
  if (cfg.B < 5) throw std::invalid_argument("p_obs targets the fifth event: B must be >= 5");
  long hits = 0;
  for (int i = 0; i < reps; ++i) {
    Rng rng(derive_seed(cfg.seed, kCalibrationStream, static_cast<uint64_t>(i)));
    const SubjectRecord subj = cfg.model == ModelKind::multiplicative
                                   ? simulate_subject_mult(cfg, rng)
                                   : simulate_subject_add(cfg, rng, nullptr);
    if (subj.event_times.size() >= 5) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(reps);
}

CalibrationResult calibrate_rates(const SimConfig& cfg, double target_pobs, int reps, double tol,
                                  double censor_ratio) {
  if (!(target_pobs > 0.0 && target_pobs < 1.0))
    throw std::invalid_argument("target p_obs must be in (0,1)");
  if (!(tol > 0.0)) throw std::invalid_argument("tol must be positive");
  if (!(censor_ratio > 0.0)) throw std::invalid_argument("censor ratio must be positive");

  CalibrationResult result;
  auto pobs_at = [&](double rate) {
    SimConfig probe = cfg;
    probe.death_rate = rate;
    probe.censor_rate = censor_ratio * rate;
    ++result.evaluations;
    return estimate_pobs(probe, reps);
  };

  double lo = 1e-6;
  const double p_max = pobs_at(lo);
  if (target_pobs > p_max)
    throw EstimationError("target p_obs " + std::to_string(target_pobs) +
                          " unreachable: censoring-free maximum is about " +
                          std::to_string(p_max));
  double hi = 1.0;
  double p_hi = pobs_at(hi);
  while (p_hi > target_pobs) {
    hi *= 2.0;
    if (hi > 1e6)
      throw EstimationError("target p_obs unreachable: p_obs at rate 1e6 is still " +
                            std::to_string(p_hi));
    p_hi = pobs_at(hi);
  }

  for (int it = 0; it < 200; ++it) {
    const double mid = std::sqrt(lo * hi);
    const double p_mid = pobs_at(mid);
    if (std::abs(p_mid - target_pobs) <= tol) {
      result.death_rate = mid;
      result.censor_rate = censor_ratio * mid;
      result.achieved_pobs = p_mid;
      return result;
    }
    if (p_mid > target_pobs) lo = mid;
    else hi = mid;
    if (hi / lo < 1.0 + 1e-13) break;
  }
  throw EstimationError(
      "calibration bisection exhausted: the Monte Carlo p_obs steps over the target; "
      "increase reps or tol");
}

}  // namespace esrm
