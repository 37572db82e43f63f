#include "demblind/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "demblind/error.hpp"

namespace demblind::likelihood {

namespace {

Eigen::VectorXd clamp(const Eigen::VectorXd& x, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

// Newton-type direction on the free coordinates; falls back to diagonal
// scaling when the reduced information is not positive definite.
Eigen::VectorXd ascent_direction(const Eigen::MatrixXd& info, const Eigen::VectorXd& grad) {
  const Eigen::Index n = grad.size();
  const double ridge = 1e-10 * std::max(info.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  Eigen::MatrixXd regularized = info;
  regularized.diagonal().array() += ridge;
  Eigen::LLT<Eigen::MatrixXd> llt(regularized);
  if (llt.info() == Eigen::Success) {
    Eigen::VectorXd d = llt.solve(grad);
    if (d.allFinite() && d.dot(grad) > 0.0) return d;
  }
  Eigen::VectorXd d(n);
  for (Eigen::Index i = 0; i < n; ++i) d[i] = grad[i] / std::max(info(i, i), ridge);
  return d;
}

}  // namespace

ScoringResult maximize_scoring(const ScoringObjective& objective, Eigen::VectorXd x0,
                               const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                               const Eigen::VectorXd& scale, const ScoringOptions& options) {
  const Eigen::Index n = x0.size();
  ScoringResult result;
  result.x = clamp(x0, lower, upper);

  auto point = objective(result.x, true);
  if (!point) throw DegenerateModel("objective is infeasible at the starting point");
  result.value = point->value;

  std::vector<Eigen::Index> free;
  for (int iter = 1; iter <= options.max_iterations; ++iter) {
    result.iterations = iter;
    const Eigen::VectorXd& g = point->gradient;
    const Eigen::MatrixXd& info = point->information;

    free.clear();
    for (Eigen::Index i = 0; i < n; ++i) {
      const bool pinned_low = result.x[i] <= lower[i] && g[i] <= 0.0;
      const bool pinned_high = result.x[i] >= upper[i] && g[i] >= 0.0;
      if (!pinned_low && !pinned_high && info(i, i) > 0.0) free.push_back(i);
    }
    if (free.empty()) {
      result.converged = true;
      break;
    }

    const auto m = static_cast<Eigen::Index>(free.size());
    Eigen::MatrixXd sub_info(m, m);
    Eigen::VectorXd sub_grad(m);
    for (Eigen::Index a = 0; a < m; ++a) {
      sub_grad[a] = g[free[a]];
      for (Eigen::Index b = 0; b < m; ++b) sub_info(a, b) = info(free[a], free[b]);
    }
    const Eigen::VectorXd sub_dir = ascent_direction(sub_info, sub_grad);
    if (sub_grad.dot(sub_dir) < options.decrement_tol) {
      result.converged = true;
      break;
    }
    Eigen::VectorXd direction = Eigen::VectorXd::Zero(n);
    for (Eigen::Index a = 0; a < m; ++a) direction[free[a]] = sub_dir[a];

    // Backtracking with an Armijo condition on the projected displacement.
    bool accepted = false;
    Eigen::VectorXd trial;
    double trial_value = 0.0;
    double step = 1.0;
    for (int ls = 0; ls < 60; ++ls, step *= 0.5) {
      trial = clamp(result.x + step * direction, lower, upper);
      const Eigen::VectorXd dx = trial - result.x;
      if (dx.cwiseAbs().maxCoeff() == 0.0) break;
      auto value_only = objective(trial, false);
      if (!value_only || !std::isfinite(value_only->value)) continue;
      const double slope = g.dot(dx);
      const bool sufficient = slope > 0.0 ? value_only->value >= result.value + 1e-4 * slope
                                          : value_only->value > result.value;
      if (sufficient) {
        accepted = true;
        trial_value = value_only->value;
        break;
      }
    }
    if (!accepted) {
      // No ascent possible within numerical precision: stationary point.
      result.converged = true;
      break;
    }

    const double rel_objective =
        std::abs(trial_value - result.value) / std::max(1.0, std::abs(result.value));
    double rel_param = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double denom = std::max({std::abs(trial[i]), std::abs(result.x[i]), scale[i]});
      rel_param = std::max(rel_param, std::abs(trial[i] - result.x[i]) / denom);
    }

    auto next = objective(trial, true);
    if (!next) throw DegenerateModel("objective became infeasible at an accepted point");
    point = std::move(next);
    result.x = trial;
    result.value = point->value;

    if (rel_objective < options.rel_objective_tol && rel_param < options.rel_param_tol) {
      result.converged = true;
      break;
    }
  }
  return result;
}

}  // namespace demblind::likelihood
