#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "demblind/error.hpp"
#include "demblind/regression.hpp"
#include "demblind/simulate.hpp"

using namespace demblind;
using namespace demblind::regression;

namespace {

// Estimates drawn around a truth model with noise equal to their stated SD.
std::vector<GroupEstimate> synthetic(const simulate::TruthModel& truth, int n, double rel_sd,
                                     std::uint64_t seed, double z_lo = 0.0, double z_hi = 6000.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> nstk(1.0, 50.0), z(z_lo, z_hi);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<GroupEstimate> out;
  for (int i = 0; i < n; ++i) {
    GroupEstimate e;
    e.mean_predictor = {nstk(rng), z(rng)};
    const double mu = truth(e.mean_predictor);
    e.crlb_sd = rel_sd * mu;
    e.value = mu + e.crlb_sd * n01(rng);
    out.push_back(e);
  }
  return out;
}

simulate::TruthModel model(ModelKind kind, std::vector<double> c) {
  return {kind, Eigen::Map<Eigen::VectorXd>(c.data(), Eigen::Index(c.size()))};
}

}  // namespace

TEST_CASE("model kinds") {
  for (ModelKind k : kAllModels) CHECK(parse_model_kind(to_string(k)) == k);
  CHECK_THROWS_AS(parse_model_kind("cubic"), InvalidArgument);
  CHECK(regressor_count(ModelKind::constant) == 1);
  CHECK(regressor_count(ModelKind::inv_nstk) == 2);
  CHECK(regressor_count(ModelKind::z_linear) == 2);
  CHECK(regressor_count(ModelKind::z_quadratic) == 2);
  CHECK(regressor_count(ModelKind::full_linear) == 4);
  CHECK(regressor_count(ModelKind::full_quadratic) == 4);
  CHECK(m_exponent(ModelKind::z_quadratic) == 2);
  CHECK(m_exponent(ModelKind::full_linear) == 1);
  CHECK(m_exponent(ModelKind::inv_nstk) == 0);
  CHECK(candidate_models(0).size() == 6);
  CHECK(candidate_models(1).size() == 4);
  CHECK(candidate_models(2).size() == 4);
  CHECK(term_names(ModelKind::full_quadratic) == std::vector<std::string>{"1", "1/N", "Z^2", "Z^2/N"});
}

TEST_CASE("design rows") {
  CHECK(design_row(ModelKind::constant, {7, 300}) == Eigen::VectorXd::Ones(1));
  const Eigen::VectorXd fq = design_row(ModelKind::full_quadratic, {10, 1000});
  REQUIRE(fq.size() == 4);
  CHECK(fq[0] == 1.0);
  CHECK(fq[1] == doctest::Approx(0.1));
  CHECK(fq[2] == doctest::Approx(1e6));
  CHECK(fq[3] == doctest::Approx(1e5));
  const Eigen::VectorXd inv = design_row(ModelKind::inv_nstk, {1, 55});
  CHECK(inv == Eigen::Vector2d(1, 1));
  const Eigen::VectorXd fl = design_row(ModelKind::full_linear, {4, 200});
  CHECK(fl == Eigen::Vector4d(1, 0.25, 200, 50));
}

TEST_CASE("weighted fit recovers a plane") {
  const auto truth = model(ModelKind::full_linear, {2.0, 5.0, 1e-3, 4e-3});
  const auto est = synthetic(truth, 400, 1e-3, 1);
  const auto fit = fit_robust_wls(est, ModelKind::full_linear);
  for (int j = 0; j < 4; ++j) {
    CHECK(std::abs(fit.coeffs[j] - truth.coeffs[j]) <= 3.0 * fit.coeff_sds[j]);
    CHECK(fit.t_stats[j] == fit.coeffs[j] / fit.coeff_sds[j]);
  }

  // Weighted residuals are orthogonal to each design column over kept rows.
  for (int j = 0; j < 4; ++j) {
    double dot = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < est.size(); ++i) {
      if (fit.outlier_mask[i]) continue;
      const Eigen::VectorXd row = design_row(fit.model, est[i].mean_predictor);
      const double w = 1.0 / (est[i].crlb_sd * est[i].crlb_sd);
      dot += w * (est[i].value - row.dot(fit.coeffs)) * row[j];
      scale += w * std::abs(est[i].value * row[j]);
    }
    CHECK(std::abs(dot) <= 1e-8 * scale);
  }
}

TEST_CASE("t statistic arithmetic") {
  CHECK(1.0293 / 0.0648 == doctest::Approx(15.88).epsilon(0.01 / 15.88));
}

TEST_CASE("gross outlier is rejected") {
  const auto truth = model(ModelKind::z_quadratic, {0.2, 2e-8});
  auto est = synthetic(truth, 300, 0.1, 5);
  const auto clean = fit_robust_wls(est, ModelKind::z_quadratic);
  est[17].value += 100.0 * est[17].crlb_sd;
  const auto dirty = fit_robust_wls(est, ModelKind::z_quadratic);
  CHECK(dirty.outlier_mask[17]);
  for (int j = 0; j < 2; ++j) CHECK(std::abs(dirty.coeffs[j] / clean.coeffs[j] - 1.0) < 0.01);

  // Refitting on the retained rows flags nothing new.
  std::vector<GroupEstimate> kept;
  for (std::size_t i = 0; i < est.size(); ++i)
    if (!dirty.outlier_mask[i]) kept.push_back(est[i]);
  const auto refit = fit_robust_wls(kept, ModelKind::z_quadratic);
  CHECK(refit.n_outliers() == 0);
  for (int j = 0; j < 2; ++j) CHECK(refit.coeffs[j] == doctest::Approx(dirty.coeffs[j]).epsilon(1e-10));
}

TEST_CASE("inestimable designs") {
  const auto truth = model(ModelKind::constant, {1.0});
  auto est = synthetic(truth, 2, 0.1, 2);
  CHECK_NOTHROW(fit_robust_wls(est, ModelKind::constant));
  CHECK_THROWS_AS(fit_robust_wls(est, ModelKind::inv_nstk), ModelInestimable);
  est = synthetic(truth, 20, 0.1, 2);
  for (auto& e : est) e.mean_predictor.n_stk = 4.0;
  CHECK_THROWS_AS(fit_robust_wls(est, ModelKind::inv_nstk), ModelInestimable);
  est[0].crlb_sd = 0.0;
  CHECK_THROWS_AS(fit_robust_wls(est, ModelKind::constant), InvalidArgument);
}

TEST_CASE("generalized R2") {
  const auto truth = simulate::reference_variance_model();
  const auto est = synthetic(truth, 1000, 0.12, 9, -400.0, 5500.0);
  const auto c = fit_robust_wls(est, ModelKind::constant);
  CHECK(c.r2 == 0.0);
  CHECK(generalized_r2(c, est) == 0.0);
  const auto inv = fit_robust_wls(est, ModelKind::inv_nstk);
  const auto zq = fit_robust_wls(est, ModelKind::z_quadratic);
  const auto fq = fit_robust_wls(est, ModelKind::full_quadratic);
  CHECK(inv.r2 >= 0.0);
  CHECK(inv.r2 < 1.0);
  CHECK(fq.r2 < 1.0);
  CHECK(fq.r2 >= inv.r2);
  CHECK(fq.r2 >= zq.r2);
  CHECK(generalized_r2(fq, est) == fq.r2);
  const std::vector<GroupEstimate> shorter(est.begin(), est.end() - 1);
  CHECK_THROWS_AS(generalized_r2(fq, shorter), InvalidArgument);
}

TEST_CASE("model selection") {
  SUBCASE("constant data") {
    const auto est = synthetic(model(ModelKind::constant, {3.0}), 500, 0.05, 4);
    const auto sel = select_model(est, candidate_models(0));
    CHECK(sel.selected.model == ModelKind::constant);
    CHECK_FALSE(sel.low_significance);
  }
  SUBCASE("variance-like data") {
    const auto est = synthetic(simulate::reference_variance_model(), 3000, 0.1, 6);
    const auto sel = select_model(est, candidate_models(0));
    CHECK(sel.selected.model == ModelKind::full_quadratic);
  }
  SUBCASE("correlation-width-like data") {
    const auto est = synthetic(simulate::reference_corr_model(), 3000, 0.1, 7);
    const auto sel = select_model(est, candidate_models(0));
    CHECK(sel.selected.model == ModelKind::z_quadratic);
  }
  SUBCASE("nothing significant") {
    const auto est = synthetic(model(ModelKind::constant, {3.0}), 4, 2.0, 4);
    const auto sel = select_model(est, candidate_models(0), 1e6);
    CHECK(sel.low_significance);
    CHECK(sel.inestimable.size() == 2);
  }
  const std::vector<GroupEstimate> one(1);
  CHECK_THROWS_AS(select_model(one, std::vector{ModelKind::full_linear}), ModelInestimable);
}

TEST_CASE("prediction") {
  const auto v = simulate::reference_variance_model();
  CHECK(std::sqrt(v({1, 0})) == doctest::Approx(5.1668).epsilon(0.001 / 5.1668));
  const double elev = 4.8991e-7 * 4000.0 * 4000.0 + 6.1069e-6 * 4000.0 * 4000.0 / 10.0;
  CHECK(v({10, 4000}) - v({10, 0}) == doctest::Approx(elev));
  CHECK(elev == doctest::Approx(17.61).epsilon(0.01 / 17.61));
  const auto c = simulate::reference_corr_model();
  CHECK(std::sqrt(c({1, 0})) == doctest::Approx(0.440).epsilon(0.005 / 0.44));
  CHECK(std::sqrt(c({1, 5000})) == doctest::Approx(0.8).epsilon(0.005 / 0.8));
  CHECK(predict(ModelKind::z_linear, Eigen::Vector2d(1.0, -1.0), {1, 10}) == 0.0);
  CHECK_THROWS_AS(predict(ModelKind::z_linear, Eigen::VectorXd::Ones(3), {1, 10}), InvalidArgument);
}

TEST_CASE("partial residuals") {
  const auto est = synthetic(model(ModelKind::inv_nstk, {1.0, 10.0}), 50, 0.05, 12);
  const auto fit = fit_robust_wls(est, ModelKind::inv_nstk);
  const auto rows = partial_residuals(fit, est);
  CHECK(rows.size() == 2 * static_cast<std::size_t>(fit.n_used));
  for (const auto& r : rows) {
    const auto& e = est[std::size_t(r.estimate_index)];
    const Eigen::VectorXd x = design_row(fit.model, e.mean_predictor);
    CHECK(r.regressor == x[r.term]);
    CHECK(r.residual == doctest::Approx(e.value - x.dot(fit.coeffs) + fit.coeffs[r.term] * x[r.term]));
  }
}
