#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace esrm {

/// Baseline hazard family with unit scale.
///   weibull:  alpha0(t) = shape * t^(shape-1),  Lambda0(t) = t^shape
///   gompertz: alpha0(t) = exp(shape * t),       Lambda0(t) = (exp(shape*t) - 1) / shape
struct BaselineSpec {
  enum class Family { weibull, gompertz };
  Family family = Family::weibull;
  double shape = 2.5;

  void validate() const {
    if (!(shape > 0.0) || !std::isfinite(shape))
      throw std::invalid_argument("baseline shape must be finite and positive");
  }

  double hazard(double t) const {
    if (family == Family::weibull) return shape * std::pow(t, shape - 1.0);
    return std::exp(shape * t);
  }

  double cum_hazard(double t) const {
    if (family == Family::weibull) return std::pow(t, shape);
    return std::expm1(shape * t) / shape;
  }

  double inv_cum_hazard(double u) const {
    if (family == Family::weibull) return std::pow(u, 1.0 / shape);
    return std::log1p(shape * u) / shape;
  }

  // hazard is nondecreasing in t; required by the thinning bound
  bool nondecreasing_hazard() const {
    return family == Family::gompertz || shape >= 1.0;
  }
};

/// Parses "weibull:2.5" or "gompertz:0.5".
BaselineSpec parse_baseline(const std::string& text);

}  // namespace esrm
