#include "demblind/regression.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "demblind/error.hpp"

namespace demblind::regression {

namespace {

struct Terms {
  bool inv_n;
  int m;  // 0 when there is no elevation term
  bool cross;
};

Terms terms_of(ModelKind kind) {
  switch (kind) {
    case ModelKind::constant: return {false, 0, false};
    case ModelKind::inv_nstk: return {true, 0, false};
    case ModelKind::z_linear: return {false, 1, false};
    case ModelKind::z_quadratic: return {false, 2, false};
    case ModelKind::full_linear: return {true, 1, true};
    case ModelKind::full_quadratic: return {true, 2, true};
  }
  throw InvalidArgument("unknown model kind");
}

struct WlsSolution {
  Eigen::VectorXd coeffs;
  Eigen::VectorXd sds;
};

WlsSolution solve_wls(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& sd,
                      const std::vector<int>& rows) {
  const int p = static_cast<int>(x.cols());
  const int n = static_cast<int>(rows.size());
  if (n < p + 1) {
    throw ModelInestimable("need at least " + std::to_string(p + 1) + " rows, have " +
                           std::to_string(n));
  }
  Eigen::MatrixXd a(n, p);
  Eigen::VectorXd b(n);
  for (int k = 0; k < n; ++k) {
    const int i = rows[static_cast<std::size_t>(k)];
    a.row(k) = x.row(i) / sd(i);
    b(k) = y(i) / sd(i);
  }
  // Column equilibration: Z^2 terms are ~1e7 while 1/N is ~1e-2.
  Eigen::VectorXd scale = a.colwise().norm().transpose();
  for (int j = 0; j < p; ++j) {
    if (!(scale(j) > 0.0)) throw ModelInestimable("design column is identically zero");
  }
  a = a * scale.cwiseInverse().asDiagonal();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(1e-10);
  if (qr.rank() < p) throw ModelInestimable("design matrix is rank deficient");
  WlsSolution out;
  out.coeffs = qr.solve(b).cwiseQuotient(scale);
  const Eigen::MatrixXd cov = (a.transpose() * a).inverse();
  out.sds = cov.diagonal().cwiseSqrt().cwiseQuotient(scale);
  return out;
}

void check_estimates(std::span<const GroupEstimate> estimates) {
  for (const auto& e : estimates) {
    if (!std::isfinite(e.value) || !std::isfinite(e.crlb_sd) || !(e.crlb_sd > 0.0)) {
      throw InvalidArgument("group estimates need finite values and positive finite crlb_sd");
    }
    if (!(e.mean_predictor.n_stk > 0.0)) throw InvalidArgument("n_stk must be positive");
  }
}

// (2/n)(l_U - l_R) over the retained rows; R^2 = 1 - exp(-gain). Kept apart
// from R^2 because the exponential saturates at 1 in double precision once
// the fit explains the data well.
double gain_over_rows(const ModelFit& fit, std::span<const GroupEstimate> estimates) {
  if (fit.model == ModelKind::constant) return 0.0;
  double sw = 0.0, swy = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    if (fit.outlier_mask[i]) continue;
    const double w = 1.0 / (estimates[i].crlb_sd * estimates[i].crlb_sd);
    sw += w;
    swy += w * estimates[i].value;
    ++n;
  }
  if (n == 0) return 0.0;
  const double mean = swy / sw;
  double l_u = 0.0, l_r = 0.0;
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    if (fit.outlier_mask[i]) continue;
    const auto& e = estimates[i];
    const double ru = (e.value - design_row(fit.model, e.mean_predictor).dot(fit.coeffs)) / e.crlb_sd;
    const double rr = (e.value - mean) / e.crlb_sd;
    l_u -= 0.5 * ru * ru;
    l_r -= 0.5 * rr * rr;
  }
  return std::max(0.0, (2.0 / n) * (l_u - l_r));
}

double median_of(std::vector<double> v) {
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  return 0.5 * (*mid + *std::max_element(v.begin(), mid));
}

}  // namespace

int ModelFit::n_outliers() const {
  return static_cast<int>(std::count(outlier_mask.begin(), outlier_mask.end(), true));
}

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::constant: return "constant";
    case ModelKind::inv_nstk: return "inv_nstk";
    case ModelKind::z_linear: return "z_linear";
    case ModelKind::z_quadratic: return "z_quadratic";
    case ModelKind::full_linear: return "full_linear";
    case ModelKind::full_quadratic: return "full_quadratic";
  }
  return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
  for (ModelKind k : kAllModels) {
    if (to_string(k) == name) return k;
  }
  throw InvalidArgument("unknown model kind: " + std::string(name));
}

int regressor_count(ModelKind kind) {
  const Terms t = terms_of(kind);
  return 1 + (t.inv_n ? 1 : 0) + (t.m > 0 ? 1 : 0) + (t.cross ? 1 : 0);
}

int m_exponent(ModelKind kind) { return terms_of(kind).m; }

std::vector<std::string> term_names(ModelKind kind) {
  const Terms t = terms_of(kind);
  const std::string z = t.m == 2 ? "Z^2" : "Z";
  std::vector<std::string> names{"1"};
  if (t.inv_n) names.push_back("1/N");
  if (t.m > 0) names.push_back(z);
  if (t.cross) names.push_back(z + "/N");
  return names;
}

std::vector<ModelKind> candidate_models(int m_choice) {
  switch (m_choice) {
    case 1:
      return {ModelKind::constant, ModelKind::inv_nstk, ModelKind::z_linear, ModelKind::full_linear};
    case 2:
      return {ModelKind::constant, ModelKind::inv_nstk, ModelKind::z_quadratic,
              ModelKind::full_quadratic};
    case 0:
      return {std::begin(kAllModels), std::end(kAllModels)};
  }
  throw InvalidArgument("m_choice must be 0, 1 or 2");
}

Eigen::VectorXd design_row(ModelKind kind, const PredictorVector& p) {
  const Terms t = terms_of(kind);
  Eigen::VectorXd row(regressor_count(kind));
  const double inv_n = 1.0 / p.n_stk;
  const double zm = t.m == 2 ? p.z * p.z : p.z;
  int k = 0;
  row(k++) = 1.0;
  if (t.inv_n) row(k++) = inv_n;
  if (t.m > 0) row(k++) = zm;
  if (t.cross) row(k++) = zm * inv_n;
  return row;
}

ModelFit fit_robust_wls(std::span<const GroupEstimate> estimates, ModelKind model) {
  check_estimates(estimates);
  const int n = static_cast<int>(estimates.size());
  const int p = regressor_count(model);
  Eigen::MatrixXd x(n, p);
  Eigen::VectorXd y(n), sd(n);
  for (int i = 0; i < n; ++i) {
    const auto& e = estimates[static_cast<std::size_t>(i)];
    x.row(i) = design_row(model, e.mean_predictor).transpose();
    y(i) = e.value;
    sd(i) = e.crlb_sd;
  }

  std::vector<bool> mask(static_cast<std::size_t>(n), false);
  WlsSolution sol;
  int passes = 0;
  double dispersion = 1.0;
  constexpr int kMaxPasses = 10;
  while (true) {
    std::vector<int> rows;
    for (int i = 0; i < n; ++i) {
      if (!mask[static_cast<std::size_t>(i)]) rows.push_back(i);
    }
    sol = solve_wls(x, y, sd, rows);
    ++passes;
    Eigen::VectorXd z(n);
    for (int i = 0; i < n; ++i) z(i) = std::abs(y(i) - x.row(i).dot(sol.coeffs)) / sd(i);
    // Robust dispersion of the standardized residuals on the rows just fitted,
    // floored at 1 so a well specified fit uses the plain 3-sigma rule.
    std::vector<double> used;
    used.reserve(rows.size());
    for (int i : rows) used.push_back(z(i));
    dispersion = std::max(1.0, 1.4826 * median_of(std::move(used)));
    std::vector<bool> next(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) next[static_cast<std::size_t>(i)] = z(i) > 3.0 * dispersion;
    if (next == mask || passes >= kMaxPasses) break;
    mask = std::move(next);
  }

  ModelFit fit;
  fit.model = model;
  fit.coeffs = sol.coeffs;
  fit.coeff_sds = sol.sds;
  fit.t_stats = sol.coeffs.cwiseQuotient(sol.sds);
  fit.outlier_mask = std::move(mask);
  fit.n_used = n - fit.n_outliers();
  fit.passes = passes;
  fit.dispersion = dispersion;
  fit.gain = gain_over_rows(fit, estimates);
  fit.r2 = 1.0 - std::exp(-fit.gain);
  return fit;
}

double generalized_r2(const ModelFit& fit, std::span<const GroupEstimate> estimates) {
  if (fit.outlier_mask.size() != estimates.size()) {
    throw InvalidArgument("fit and estimates disagree in length");
  }
  return 1.0 - std::exp(-gain_over_rows(fit, estimates));
}

Selection select_model(std::span<const GroupEstimate> estimates, std::span<const ModelKind> candidates,
                       double t_min) {
  Selection out;
  for (ModelKind kind : candidates) {
    try {
      out.candidates.push_back(fit_robust_wls(estimates, kind));
    } catch (const ModelInestimable&) {
      out.inestimable.push_back(kind);
    }
  }
  if (out.candidates.empty()) throw ModelInestimable("no candidate model is estimable");

  const ModelFit* best = nullptr;
  for (const auto& f : out.candidates) {
    const bool significant = (f.t_stats.array().abs() >= t_min).all();
    if (significant && (best == nullptr || f.gain > best->gain)) best = &f;
  }
  if (best == nullptr) {
    out.low_significance = true;
    for (const auto& f : out.candidates) {
      if (best == nullptr || f.gain > best->gain) best = &f;
    }
  }
  out.selected = *best;
  return out;
}

double predict(ModelKind kind, const Eigen::VectorXd& coeffs, const PredictorVector& p) {
  if (coeffs.size() != regressor_count(kind)) {
    throw InvalidArgument("coefficient count does not match the model");
  }
  return std::max(0.0, design_row(kind, p).dot(coeffs));
}

double predict(const ModelFit& fit, const PredictorVector& p) {
  return predict(fit.model, fit.coeffs, p);
}

std::vector<PartialResidual> partial_residuals(const ModelFit& fit,
                                               std::span<const GroupEstimate> estimates) {
  std::vector<PartialResidual> out;
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    if (i < fit.outlier_mask.size() && fit.outlier_mask[i]) continue;
    const Eigen::VectorXd row = design_row(fit.model, estimates[i].mean_predictor);
    const double r = estimates[i].value - row.dot(fit.coeffs);
    for (int j = 0; j < row.size(); ++j) {
      out.push_back({j, static_cast<int>(i), row(j), r + fit.coeffs(j) * row(j)});
    }
  }
  return out;
}

}  // namespace demblind::regression
