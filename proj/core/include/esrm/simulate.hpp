#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "esrm/baseline.hpp"
#include "esrm/dataset.hpp"
#include "esrm/types.hpp"

namespace esrm {

/// Uniform and exponential draws built directly on mt19937_64 output so that
/// results do not depend on the standard library's distribution
/// implementations. One generator per subject keeps parallel generation and
/// coupled comparisons deterministic.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  double uniform() {  // [0, 1)
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }
  double uniform_open() {  // (0, 1]
    return 1.0 - uniform();
  }
  double uniform_range(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double exponential(double rate) { return -std::log(uniform_open()) / rate; }

 private:
  std::mt19937_64 eng_;
};

uint64_t splitmix64(uint64_t x);
uint64_t derive_seed(uint64_t base, uint64_t tag, uint64_t index);

// Substream tags used by the generators in this module.
inline constexpr uint64_t kSubjectStream = 1;
inline constexpr uint64_t kCalibrationStream = 2;
inline constexpr uint64_t kReplicationStream = 3;
inline constexpr uint64_t kPilotStream = 4;

struct SimConfig {
  ModelKind model = ModelKind::multiplicative;
  int n = 100;
  int B = 5;
  CoefMatrix beta0;        // p x B true coefficients
  BaselineSpec baseline;   // shared by all strata
  double death_rate = 0.25;   // a_D; <= 0 disables the terminal event
  double censor_rate = 0.25;  // a_C; <= 0 disables random censoring (tau still applies)
  std::vector<std::pair<double, double>> covariate_ranges;  // default: p times (0,1)
  uint64_t seed = 1;
  double tau = 50.0;              // administrative horizon; C = min(C_raw, tau)
  double thinning_window = 0.5;   // look-ahead used by the additive sampler

  int p() const { return static_cast<int>(beta0.rows()); }
  void validate() const;
};

struct SimStats {
  long clamped_proposals = 0;  // additive hazard evaluated below zero
};

/// The four-row simulation truth: (0,0,b1,b1,0,...), (b2,...,b2),
/// b3*(1,2,...,B), (0,...,0). Requires B >= 5.
CoefMatrix make_beta0(double b1, double b2, double b3, int B);

/// Sequential inversion of the cumulative hazard exp(X beta0(s)) *
/// (Lambda0(t) - Lambda0(t0)); at most B events are generated, after which the
/// subject has exited all modeled strata.
SubjectRecord simulate_subject_mult(const SimConfig& cfg, Rng& rng);

/// Ogata thinning with the bound alpha0(window end) + max(0, X beta0(s));
/// negative additive hazards are clamped to zero and counted.
SubjectRecord simulate_subject_add(const SimConfig& cfg, Rng& rng, SimStats* stats = nullptr);

/// n independent subjects; bit-identical for a fixed seed.
Dataset simulate_dataset(const SimConfig& cfg, SimStats* stats = nullptr);

/// Monte Carlo estimate of P(at least 5 observed events) at the rates in cfg.
double estimate_pobs(const SimConfig& cfg, int reps);

struct CalibrationResult {
  double death_rate = 0.0;
  double censor_rate = 0.0;
  double achieved_pobs = 0.0;
  int evaluations = 0;
};

/// Bisection on the common rate (a_C = censor_ratio * a_D) until the Monte
/// Carlo estimate of P(>= 5 observed events) is within tol of target_pobs.
/// Common random numbers across evaluations make the estimate exactly
/// monotone in the rate.
CalibrationResult calibrate_rates(const SimConfig& cfg, double target_pobs, int reps = 20000,
                                  double tol = 0.01, double censor_ratio = 1.0);

}  // namespace esrm
