#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "demblind/likelihood.hpp"
#include "demblind/raster.hpp"

namespace demblind::regression {

using raster::PredictorVector;

/// Candidate error-parameter models; coefficient order follows the term
/// order 1, 1/N_stk, Z^m, Z^m/N_stk restricted to the terms present.
enum class ModelKind { constant, inv_nstk, z_linear, z_quadratic, full_linear, full_quadratic };

inline constexpr ModelKind kAllModels[] = {ModelKind::constant,    ModelKind::inv_nstk,
                                           ModelKind::z_linear,    ModelKind::z_quadratic,
                                           ModelKind::full_linear, ModelKind::full_quadratic};

std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);
int regressor_count(ModelKind kind);
/// Elevation exponent m of the model, 0 when it has no elevation term.
int m_exponent(ModelKind kind);
std::vector<std::string> term_names(ModelKind kind);

/// Candidate set for an elevation-exponent choice: 1, 2, or 0 for both.
std::vector<ModelKind> candidate_models(int m_choice);

Eigen::VectorXd design_row(ModelKind kind, const PredictorVector& p);

/// One observation of an error parameter for a predictor-space cell.
struct GroupEstimate {
  likelihood::Target param_kind = likelihood::Target::sigma_e2;
  double value = 0.0;
  double crlb_sd = 1.0;
  PredictorVector mean_predictor;
  int n_patches = 1;
};

struct ModelFit {
  ModelKind model = ModelKind::constant;
  Eigen::VectorXd coeffs;
  Eigen::VectorXd coeff_sds;
  Eigen::VectorXd t_stats;
  double r2 = 0.0;
  double gain = 0.0;        // (2/n)(l_U - l_R); r2 = 1 - exp(-gain)
  double dispersion = 1.0;  // residual scale used by the final rejection pass
  int n_used = 0;
  std::vector<bool> outlier_mask;  // one flag per input estimate
  int passes = 0;

  int n_outliers() const;
};

/// Weighted least squares with weights crlb_sd^-2 and iterated rejection of
/// rows whose standardized residual exceeds 3 times max(1, robust residual
/// scale), repeated until the flags stop
/// changing or 10 passes. Every pass re-tests all rows against the current
/// fit. Throws ModelInestimable.
ModelFit fit_robust_wls(std::span<const GroupEstimate> estimates, ModelKind model);

/// Likelihood-ratio determination coefficient of a fit against the best
/// weighted constant, over the fit's retained rows.
double generalized_r2(const ModelFit& fit, std::span<const GroupEstimate> estimates);

struct Selection {
  ModelFit selected;
  bool low_significance = false;  // no candidate passed the t threshold
  std::vector<ModelFit> candidates;
  std::vector<ModelKind> inestimable;
};

/// Highest-R^2 candidate among those whose every |t| >= t_min; falls back to
/// the highest-R^2 candidate with a low-significance flag.
Selection select_model(std::span<const GroupEstimate> estimates, std::span<const ModelKind> candidates,
                       double t_min = 10.0);

/// Model value at p, clamped at zero from below.
double predict(const ModelFit& fit, const PredictorVector& p);
double predict(ModelKind kind, const Eigen::VectorXd& coeffs, const PredictorVector& p);

struct PartialResidual {
  int term = 0;
  int estimate_index = 0;
  double regressor = 0.0;  // design value of the term
  double residual = 0.0;   // residual plus the term's fitted contribution
};

/// Plot data over retained rows for every term of the fit.
std::vector<PartialResidual> partial_residuals(const ModelFit& fit,
                                               std::span<const GroupEstimate> estimates);

}  // namespace demblind::regression
