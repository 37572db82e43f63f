// Acceptance suite: one PASS/FAIL line per criterion. Optional arguments
// select criteria by number, e.g. `acceptance 1 4 7`.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "demblind/covmodel.hpp"
#include "demblind/likelihood.hpp"
#include "demblind/pipeline.hpp"
#include "demblind/regression.hpp"
#include "demblind/simulate.hpp"

using namespace demblind;
using covmodel::NoiseShape;
using covmodel::Param;
using covmodel::PatchGeometry;
using covmodel::Theta;
using likelihood::Target;
using regression::GroupEstimate;
using regression::ModelKind;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), fmt, args...);
  return buf;
}

Theta make_theta(double x2, double h, double e2, double c2, NoiseShape shape = NoiseShape::gaussian) {
  Theta t;
  t.fbm = {x2, h};
  t.noise = {e2, c2, shape};
  return t;
}

Theta random_theta(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return make_theta(std::exp(std::log(0.05) + u(rng) * std::log(200.0)), 0.1 + 0.8 * u(rng),
                    std::exp(std::log(0.05) + u(rng) * std::log(200.0)), 0.1 + 2.9 * u(rng),
                    u(rng) < 0.5 ? NoiseShape::gaussian : NoiseShape::exponential);
}

// 1. Analytic covariance against the empirical covariance of simulator draws.
Outcome covariance_correctness() {
  const auto g = PatchGeometry::square(3);
  const Eigen::Index n = g.size();
  const int draws = 100000;
  std::mt19937_64 rng(101);
  int tested = 0, outside = 0;
  double worst = 0.0;
  bool consistent = true;
  for (int k = 0; k < 5; ++k) {
    const Theta th = random_theta(rng);
    const Eigen::MatrixXd cov = covmodel::observed_cov_matrix(g, th);
    // Same construction as sample_patch, with the factor computed once.
    const Eigen::MatrixXd factor = covmodel::sampling_factor(cov);
    const std::uint64_t base = 1000003ULL * std::uint64_t(k + 1);
    {
      std::mt19937_64 r(base);
      std::normal_distribution<double> normal;
      Eigen::VectorXd w(n);
      for (Eigen::Index i = 0; i < n; ++i) w[i] = normal(r);
      consistent = consistent && ((factor * w) - covmodel::sample_patch(g, th, base)).norm() <= 1e-12 * (factor * w).norm();
    }
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(n, n);
    Eigen::MatrixXd sum_sq = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd w(n), z(n);
    for (int d = 0; d < draws; ++d) {
      std::mt19937_64 r(base + std::uint64_t(d));
      std::normal_distribution<double> normal;
      for (Eigen::Index i = 0; i < n; ++i) w[i] = normal(r);
      z.noalias() = factor * w;
      const Eigen::MatrixXd outer = z * z.transpose();
      sum += outer;
      sum_sq += outer.cwiseProduct(outer);
    }
    // Zero-mean model: the estimator is the mean of products, its standard
    // error the sample SD of the products over sqrt(draws).
    const Eigen::MatrixXd mean = sum / draws;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i; j < n; ++j) {
        const double var = (sum_sq(i, j) / draws - mean(i, j) * mean(i, j)) * draws / (draws - 1.0);
        const double se = std::sqrt(var / draws);
        const double zscore = std::abs(mean(i, j) - cov(i, j)) / se;
        worst = std::max(worst, zscore);
        ++tested;
        outside += zscore > 4.0;
      }
  }
  return {outside == 0 && consistent,
          format("%d entries over 5 thetas (N=7, 1e5 draws); max |z| = %.2f; %d beyond 4 SE%s", tested,
                 worst, outside, consistent ? "" : "; sampler mismatch")};
}

// 2. Analytic derivatives against central differences.
Outcome derivative_correctness() {
  const auto g = PatchGeometry::square(5);
  std::mt19937_64 rng(202);
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    const Theta th = random_theta(rng);
    for (int p = 0; p < covmodel::kParamCount; ++p) {
      const auto which = static_cast<Param>(p);
      const double h = 1e-6 * std::max(1.0, std::abs(th.get(which)));
      Theta up = th, dn = th;
      up.set(which, th.get(which) + h);
      dn.set(which, th.get(which) - h);
      const Eigen::MatrixXd fd =
          (covmodel::observed_cov_matrix(g, up) - covmodel::observed_cov_matrix(g, dn)) / (2.0 * h);
      const Eigen::MatrixXd an = covmodel::cov_derivative(g, th, which);
      worst = std::max(worst, (an - fd).norm() / an.norm());
    }
  }
  return {worst <= 1e-4, format("20 thetas x 4 parameters (N=11); max Frobenius-relative error %.2e", worst)};
}

// 3. Fisher information: symmetry, definiteness and the Monte-Carlo score covariance.
Outcome fim_validity() {
  const auto g = PatchGeometry::square(3);
  const Theta th = make_theta(1.0, 0.6, 1.5, 0.8);
  const Eigen::Matrix4d fim = likelihood::fisher_information(g, th);
  const double asym = (fim - fim.transpose()).cwiseAbs().maxCoeff();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(fim);
  const double min_eig = es.eigenvalues().minCoeff();
  const bool psd = min_eig >= -1e-8 * fim.trace();

  const int patches = 10000;
  Eigen::Matrix4d sum = Eigen::Matrix4d::Zero();
  Eigen::Vector4d mean = Eigen::Vector4d::Zero();
  std::vector<Eigen::Vector4d> scores(patches);
  for (int i = 0; i < patches; ++i) {
    const Eigen::VectorXd z = covmodel::sample_patch(g, th, 5000 + std::uint64_t(i));
    const auto e = likelihood::evaluate(z, g, th, covmodel::kAllParams);
    if (!e) return {false, "score evaluation failed"};
    scores[std::size_t(i)] = e->score;
    mean += e->score;
  }
  mean /= patches;
  for (const auto& s : scores) sum += (s - mean) * (s - mean).transpose();
  const Eigen::Matrix4d emp = sum / (patches - 1);
  const double rel = (emp - fim).norm() / fim.norm();
  return {asym == 0.0 && psd && rel <= 0.05,
          format("max|I-I'| = %g; min eigenvalue %.3e (trace %.3e); score covariance over %d patches "
                 "differs by %.2f%% (Frobenius)",
                 asym, min_eig, fim.trace(), patches, 100.0 * rel)};
}

// 4. Homogeneity index of a pure-noise 11x11 patch.
Outcome crlb_anchor() {
  const auto g = PatchGeometry::square(5);
  const double r = pipeline::homogeneity_index(g, make_theta(0.0, 0.5, 4.0, 0.25), Target::sigma_e2,
                                               pipeline::kFallbackHurstSd);
  const double rel = std::abs(r - 0.129) / 0.129;
  return {rel <= 0.05, format("r_HA = %.4f (sqrt(2/120) = %.4f); %.1f%% from 0.129", r,
                              std::sqrt(2.0 / 120.0), 100.0 * rel)};
}

// 5. Variance estimator calibration against its bound.
Outcome estimator_calibration() {
  const auto g = PatchGeometry::square(5);
  const Theta truth = make_theta(0.01, 0.5, 4.0, 0.25);
  const likelihood::HurstPrior prior{0.5, 0.1};
  const double bound = likelihood::crlb(g, truth, Target::sigma_e2, prior.sd);
  std::vector<double> est;
  int unconverged = 0;
  for (int i = 0; i < 500; ++i) {
    const Eigen::VectorXd z = covmodel::sample_patch(g, truth, 70000 + std::uint64_t(i));
    const auto fit = likelihood::estimate_sigma_e2(z, g, prior, truth.noise.sigma_corr2);
    unconverged += !fit.converged;
    est.push_back(fit.theta.noise.sigma_e2);
  }
  const double mean = std::accumulate(est.begin(), est.end(), 0.0) / est.size();
  double ss = 0.0;
  for (double v : est) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (est.size() - 1));
  std::vector<double> sorted = est;
  std::sort(sorted.begin(), sorted.end());
  const double median = 0.5 * (sorted[249] + sorted[250]);
  const double sd_rel = std::abs(sd / bound - 1.0);
  const double bias = std::abs(median - truth.noise.sigma_e2) / truth.noise.sigma_e2;
  return {sd_rel <= 0.15 && bias < 0.05,
          format("500 patches: SD %.4f vs CRLB %.4f (%.1f%% off); median %.4f, bias %.2f%%; %d unconverged", sd,
                 bound, 100.0 * sd_rel, median, 100.0 * bias, unconverged)};
}

// 6. Group bound combination.
Outcome group_combination() {
  double worst = 0.0;
  for (int k = 1; k <= 15; ++k) {
    const std::vector<double> sds(std::size_t(k), 0.37);
    worst = std::max(worst, std::abs(likelihood::combine_crlb(sds) * std::sqrt(double(k)) / 0.37 - 1.0));
  }
  // Two patches: the combined variance is v1 v2 / (v1 + v2).
  double worst_two = 0.0;
  bool below_min = true;
  for (auto [s1, s2] : {std::pair{1.0, 1.0}, {0.5, 2.0}, {0.1, 0.3}, {3.0, 7.0}}) {
    const std::vector<double> sds{s1, s2};
    const double c = likelihood::combine_crlb(sds);
    const double v1 = s1 * s1, v2 = s2 * s2;
    worst_two = std::max(worst_two, std::abs(c * c / (v1 * v2 / (v1 + v2)) - 1.0));
    below_min = below_min && c < std::min(s1, s2);
  }
  // Joint fit of four copies of one patch: every member carries the same bound.
  const auto g = PatchGeometry::square(5);
  const Eigen::VectorXd z = covmodel::sample_patch(g, make_theta(0.05, 0.6, 2.0, 0.25), 99);
  std::vector<likelihood::GroupMember> members(4, {&z, {0.6, 0.1}, 0.25, std::nullopt});
  const auto fit = likelihood::estimate_group(members, g, Target::sigma_e2, NoiseShape::gaussian);
  const double single = fit.member_crlb_sd[0];
  const double grp_rel = std::abs(fit.crlb_sd / (single / 2.0) - 1.0);
  const bool ok = worst <= 1e-12 && worst_two <= 1e-12 && below_min && grp_rel <= 1e-9;
  return {ok, format("k=1..15 max rel dev %.1e; two-patch variance rule max rel dev %.1e%s; "
                     "joint fit of 4 copies: crlb %.5f = %.5f/2 (rel %.1e)",
                     worst, worst_two, below_min ? ", below min" : ", NOT below min", fit.crlb_sd, single,
                     grp_rel)};
}

// 7. Arithmetic on the reference model coefficients.
Outcome arithmetic_reproduction() {
  const auto v = simulate::reference_variance_model();
  const auto c = simulate::reference_corr_model();
  const double sd0 = std::sqrt(regression::predict(v.kind, v.coeffs, {1, 0}));
  const double elev = regression::predict(v.kind, v.coeffs, {10, 4000}) - regression::predict(v.kind, v.coeffs, {10, 0});
  // Reduced model at Z = 234.7 m: intercept and 1/N slope from two predictions.
  const double z = 234.7;
  const double at1 = regression::predict(v.kind, v.coeffs, {1, z});
  const double at2 = regression::predict(v.kind, v.coeffs, {2, z});
  const double slope = 2.0 * (at1 - at2);
  const double intercept = at1 - slope;
  const double c0 = std::sqrt(regression::predict(c.kind, c.coeffs, {1, 0}));
  const double c5 = std::sqrt(regression::predict(c.kind, c.coeffs, {1, 5000}));
  const bool ok = std::abs(sd0 - 5.1668) <= 0.001 && std::abs(elev - 17.61) <= 0.01 &&
                  std::abs(intercept - 1.0563) <= 0.001 && std::abs(slope - 26.0031) <= 0.001 &&
                  std::abs(c0 - 0.440) <= 0.005 && std::abs(c5 - 0.8) <= 0.005;
  return {ok, format("sigma_e(1,0) = %.4f m; elevation term(10,4000) = %.4f m^2; reduced (%.4f, %.4f); "
                     "sigma_Corr %.4f / %.4f px",
                     sd0, elev, intercept, slope, c0, c5)};
}

struct EndToEnd {
  bool ran = false;
  pipeline::PipelineResult result;
  double seconds = 0.0;
  int patches = 0;
};

EndToEnd& end_to_end_run() {
  static EndToEnd run;
  if (run.ran) return run;
  simulate::SimulationConfig sc;
  sc.seed = 11;
  sc.tiles = 40;  // 40 x 81 = 3240 windows
  const auto t0 = std::chrono::steady_clock::now();
  const auto sim = simulate::simulate(sc);
  std::vector<pipeline::TileInput> tiles;
  for (const auto& t : sim.tiles) tiles.push_back({t.dem, t.qa});
  run.patches = static_cast<int>(sim.windows.size());
  run.result = pipeline::run_pipeline(tiles, {});
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  run.ran = true;
  return run;
}

// 8. Synthetic end-to-end recovery of both reference models.
Outcome end_to_end_recovery() {
  const auto& run = end_to_end_run();
  const auto& d = run.result.diagnostics;
  if (d.status != "ok") return {false, "pipeline status " + d.status};
  const auto cands = regression::candidate_models(0);
  const auto vs = regression::select_model(run.result.variance, cands);
  const auto cs = regression::select_model(run.result.corr_width, cands);
  const auto vt = simulate::reference_variance_model();
  const auto ct = simulate::reference_corr_model();
  std::string detail = format("%d windows, %.0f s, %d iterations%s; ", run.patches, run.seconds, d.iterations,
                              d.converged ? "" : " (not converged)");
  double worst = 0.0;
  auto describe = [&](const char* name, const regression::Selection& s, const simulate::TruthModel& t) {
    detail += format("%s -> %s [", name, std::string(regression::to_string(s.selected.model)).c_str());
    for (Eigen::Index j = 0; j < s.selected.coeffs.size(); ++j) {
      detail += format("%s%.4g", j ? ", " : "", s.selected.coeffs[j]);
      if (s.selected.model == t.kind) worst = std::max(worst, std::abs(s.selected.coeffs[j] / t.coeffs[j] - 1.0));
    }
    detail += format("] from %d groups; ", static_cast<int>(s.selected.outlier_mask.size()));
  };
  describe("variance", vs, vt);
  describe("corr_width", cs, ct);
  const bool kinds = vs.selected.model == ModelKind::full_quadratic && cs.selected.model == ModelKind::z_quadratic;
  detail += format("max coefficient error %.1f%%", kinds ? 100.0 * worst : NAN);
  return {kinds && worst <= 0.15 && d.iterations <= 15 && d.converged, detail};
}

// 9. Gross outliers injected into the end-to-end estimates.
Outcome robustness() {
  const auto& run = end_to_end_run();
  std::vector<GroupEstimate> all[2] = {run.result.variance, run.result.corr_width};
  const ModelKind kinds[2] = {ModelKind::full_quadratic, ModelKind::z_quadratic};
  const char* names[2] = {"variance", "corr_width"};
  std::string detail;
  bool ok = true;
  for (int k = 0; k < 2; ++k) {
    auto& est = all[k];
    if (est.size() < 100) return {false, format("only %zu %s estimates", est.size(), names[k])};
    const auto clean = regression::fit_robust_wls(est, kinds[k]);
    std::mt19937_64 rng(900 + std::uint64_t(k));
    std::vector<std::size_t> idx(est.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t inject = std::max<std::size_t>(1, est.size() / 100);
    auto dirty = est;
    for (std::size_t i = 0; i < inject; ++i) dirty[idx[i]].value *= 100.0;
    const auto fit = regression::fit_robust_wls(dirty, kinds[k]);
    std::size_t flagged = 0;
    for (std::size_t i = 0; i < inject; ++i) flagged += fit.outlier_mask[idx[i]];
    double change = 0.0;
    for (Eigen::Index j = 0; j < clean.coeffs.size(); ++j)
      change = std::max(change, std::abs(fit.coeffs[j] / clean.coeffs[j] - 1.0));
    const double frac = double(flagged) / double(inject);
    ok = ok && change < 0.03 && frac >= 0.9;
    if (!detail.empty()) detail += "; ";
    detail += format("%s: %zu injected, %.0f%% flagged, max coefficient change %.2f%%, clean outlier rate %.1f%%",
                     names[k], inject, 100.0 * frac, 100.0 * change,
                     100.0 * clean.n_outliers() / double(est.size()));
  }
  return {ok, detail};
}

// 10. Regression statistics.
Outcome regression_statistics() {
  std::vector<std::vector<GroupEstimate>> sets;
  {
    std::mt19937_64 rng(1234);
    std::uniform_real_distribution<double> n(1, 50), z(0, 6000), u(0.5, 1.5);
    std::normal_distribution<double> n01;
    for (int s = 0; s < 3; ++s) {
      std::vector<GroupEstimate> est;
      for (int i = 0; i < 500; ++i) {
        GroupEstimate e;
        e.mean_predictor = {n(rng), z(rng)};
        const double mu = s == 0 ? 3.0 : s == 1 ? simulate::reference_variance_model()(e.mean_predictor)
                                                : 5.0 + std::sin(e.mean_predictor.z / 500.0);
        e.crlb_sd = 0.1 * mu * u(rng);
        e.value = mu + e.crlb_sd * n01(rng);
        est.push_back(e);
      }
      sets.push_back(est);
    }
  }
  const auto& run = end_to_end_run();
  sets.push_back(run.result.variance);
  sets.push_back(run.result.corr_width);

  bool zero = true, nested = true;
  const std::pair<ModelKind, ModelKind> pairs[] = {
      {ModelKind::constant, ModelKind::inv_nstk},       {ModelKind::constant, ModelKind::z_linear},
      {ModelKind::constant, ModelKind::z_quadratic},    {ModelKind::inv_nstk, ModelKind::full_linear},
      {ModelKind::z_linear, ModelKind::full_linear},    {ModelKind::inv_nstk, ModelKind::full_quadratic},
      {ModelKind::z_quadratic, ModelKind::full_quadratic}};
  int checks = 0;
  for (const auto& est : sets) {
    if (est.size() < 10) continue;
    const auto c = regression::fit_robust_wls(est, ModelKind::constant);
    zero = zero && c.r2 == 0.0 && regression::generalized_r2(c, est) == 0.0;
    for (const auto& [small, big] : pairs) {
      const auto a = regression::fit_robust_wls(est, small);
      const auto b = regression::fit_robust_wls(est, big);
      // Nesting compares likelihoods over one row set: the larger model's retained rows.
      auto sub = a;
      sub.outlier_mask = b.outlier_mask;
      nested = nested && b.r2 >= regression::generalized_r2(sub, est) - 1e-12;
      ++checks;
    }
  }

  // A constant fit whose estimate is 1.0293 with SD 0.0648.
  std::vector<GroupEstimate> est;
  for (int i = 0; i < 100; ++i) {
    GroupEstimate e;
    e.mean_predictor = {double(1 + i % 7), 10.0 * i};
    e.crlb_sd = 0.648;
    e.value = 1.0293 + (i % 2 ? 0.3 : -0.3);
    est.push_back(e);
  }
  const auto fit = regression::fit_robust_wls(est, ModelKind::constant);
  const double t = fit.t_stats[0];
  const bool t_ok = std::abs(fit.coeffs[0] - 1.0293) < 1e-12 && std::abs(fit.coeff_sds[0] - 0.0648) < 1e-12 &&
                    std::abs(t - 15.88) <= 0.01;
  return {zero && nested && t_ok,
          format("constant-model R^2 zero on %zu data sets: %s; %d nested pairs monotone: %s; t = %.4f/%.4f = %.4f",
                 sets.size(), zero ? "yes" : "no", checks, nested ? "yes" : "no", fit.coeffs[0],
                 fit.coeff_sds[0], t)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"covariance correctness", covariance_correctness},
      {"derivative correctness", derivative_correctness},
      {"Fisher information validity", fim_validity},
      {"CRLB anchor", crlb_anchor},
      {"estimator calibration", estimator_calibration},
      {"group combination", group_combination},
      {"arithmetic reproduction", arithmetic_reproduction},
      {"end-to-end synthetic recovery", end_to_end_recovery},
      {"robustness to gross outliers", robustness},
      {"regression statistics", regression_statistics},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!wanted.empty() && !wanted.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %2d %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, secs,
                o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
