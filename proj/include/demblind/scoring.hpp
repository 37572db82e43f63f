#pragma once

#include <functional>
#include <optional>

#include <Eigen/Dense>

namespace demblind::likelihood {

/// Objective value with gradient and expected information (a positive
/// semidefinite curvature model). Derivatives may be left empty when the
/// caller only asked for the value.
struct ScoringPoint {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd information;
};

/// Returns nullopt at infeasible points (non-factorizable covariance).
using ScoringObjective =
    std::function<std::optional<ScoringPoint>(const Eigen::VectorXd& x, bool with_derivatives)>;

struct ScoringOptions {
  int max_iterations = 500;
  double rel_objective_tol = 1e-8;
  double rel_param_tol = 1e-6;
  // Stop once g' I^-1 g on the free coordinates drops below this: the
  // remaining step is about sqrt(tol) standard errors long.
  double decrement_tol = 1e-6;
};

struct ScoringResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Box-constrained maximization by projected Fisher scoring with
/// backtracking. Coordinates pinned at a bound whose gradient points outward
/// are frozen for the step. `scale` gives per-coordinate magnitudes below
/// which relative parameter change is measured absolutely.
ScoringResult maximize_scoring(const ScoringObjective& objective, Eigen::VectorXd x0,
                               const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                               const Eigen::VectorXd& scale, const ScoringOptions& options = {});

}  // namespace demblind::likelihood
