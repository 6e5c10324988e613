#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <string>
#include <vector>

namespace esrm {

// Event-specific coefficients: column s-1 holds beta(s), row j holds the
// per-stratum profile beta^j of covariate j.
using CoefMatrix = Eigen::MatrixXd;

enum class ModelKind { multiplicative, additive };

enum class EstimatorKind { unconstrained, constant, tv, tv_two_step };

std::string to_string(ModelKind m);
std::string to_string(EstimatorKind k);
ModelKind parse_model(const std::string& s);
EstimatorKind parse_estimator(const std::string& s);

/// Raised on malformed input files; carries a 1-based line number when known.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, long line = -1)
      : std::runtime_error(line >= 0 ? "line " + std::to_string(line) + ": " + msg : msg),
        line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

/// Raised when an estimator cannot produce a solution (singular system,
/// monotone likelihood, solver non-convergence, ...).
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FitResult {
  EstimatorKind kind = EstimatorKind::unconstrained;
  CoefMatrix beta;            // p x B
  double lambda = 0.0;        // raw penalty level lambda_n (0 for unpenalized fits)
  int iterations = 0;
  bool converged = true;
  double kkt_residual = 0.0;  // sup-norm residual of the stationarity conditions
  std::vector<double> objective_trace;  // objective at accepted iterates
  std::vector<std::string> warnings;
};

}  // namespace esrm
