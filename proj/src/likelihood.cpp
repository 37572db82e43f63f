#include "demblind/likelihood.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <utility>

#include "demblind/error.hpp"
#include "demblind/scoring.hpp"

namespace demblind::likelihood {

using covmodel::Coords;
using covmodel::FbmParams;
using covmodel::NoiseParams;
using covmodel::NoiseShape;

std::string_view to_string(Target target) {
  return target == Target::sigma_e2 ? "variance" : "corr_width";
}

Param param_of(Target target) {
  return target == Target::sigma_e2 ? Param::sigma_e2 : Param::sigma_corr2;
}

Param other_param(Target target) {
  return target == Target::sigma_e2 ? Param::sigma_corr2 : Param::sigma_e2;
}

namespace {

// Per-thread scratch space so that repeated evaluations do not allocate.
struct Workspace {
  covmodel::CovarianceBundle bundle;
  Eigen::LLT<Eigen::MatrixXd> llt;
  Eigen::VectorXd alpha;
  Eigen::MatrixXd precision;
  std::array<Eigen::MatrixXd, covmodel::kParamCount> weighted;
  std::array<Eigen::MatrixXd, covmodel::kParamCount> weighted_t;
};

Workspace& workspace() {
  thread_local Workspace ws;
  return ws;
}

// Factorizes cov + jitter in place of ws.llt; cov is modified.
bool factorize(Eigen::MatrixXd& cov, Eigen::LLT<Eigen::MatrixXd>& llt) {
  cov.diagonal().array() += covmodel::jitter_for(cov);
  llt.compute(cov);
  if (llt.info() != Eigen::Success) return false;
  return (llt.matrixLLT().diagonal().array() > 0.0).all();
}

double log_det(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

double gaussian_ll(const Eigen::VectorXd& z, const Eigen::LLT<Eigen::MatrixXd>& llt,
                   Eigen::VectorXd& alpha) {
  alpha = z;
  llt.solveInPlace(alpha);
  return -0.5 * (z.dot(alpha) + log_det(llt));
}

}  // namespace

double log_likelihood(const Eigen::VectorXd& increments, const Eigen::MatrixXd& cov) {
  if (cov.rows() != increments.size() || cov.cols() != increments.size())
    throw InvalidArgument("covariance and increment dimensions differ");
  Eigen::MatrixXd work = cov;
  Eigen::LLT<Eigen::MatrixXd> llt;
  if (!factorize(work, llt)) throw DegenerateModel("covariance not factorizable");
  Eigen::VectorXd alpha;
  return gaussian_ll(increments, llt, alpha);
}

double log_likelihood(const Eigen::VectorXd& increments, const PatchGeometry& geometry,
                      const Theta& theta) {
  if (geometry.size() != increments.size())
    throw InvalidArgument("covariance and increment dimensions differ");
  auto ll = try_log_likelihood(increments, geometry, theta);
  if (!ll) throw DegenerateModel("covariance not factorizable");
  return *ll;
}

std::optional<double> try_log_likelihood(const Eigen::VectorXd& increments,
                                         const PatchGeometry& geometry, const Theta& theta) {
  Workspace& ws = workspace();
  covmodel::evaluate_covariance(geometry, theta, ParamMask{}, ws.bundle);
  if (!factorize(ws.bundle.cov, ws.llt)) return std::nullopt;
  return gaussian_ll(increments, ws.llt, ws.alpha);
}

std::optional<Evaluation> evaluate(const Eigen::VectorXd& increments, const PatchGeometry& geometry,
                                   const Theta& theta, const ParamMask& mask) {
  Workspace& ws = workspace();
  covmodel::evaluate_covariance(geometry, theta, mask, ws.bundle);
  if (!factorize(ws.bundle.cov, ws.llt)) return std::nullopt;

  Evaluation out;
  out.log_likelihood = gaussian_ll(increments, ws.llt, ws.alpha);

  const Eigen::Index n = geometry.size();
  ws.precision.setIdentity(n, n);
  ws.llt.solveInPlace(ws.precision);
  for (int i = 0; i < covmodel::kParamCount; ++i) {
    if (!mask[i]) continue;
    const auto u = static_cast<std::size_t>(i);
    const Eigen::MatrixXd& d = ws.bundle.derivative[u];
    ws.weighted[u].noalias() = ws.precision * d;
    ws.weighted_t[u] = ws.weighted[u].transpose();
    out.score[i] = 0.5 * (ws.alpha.dot(d * ws.alpha) - ws.weighted[u].trace());
  }
  // tr(W_i W_j) as an elementwise sum against the transpose of W_j.
  for (int i = 0; i < covmodel::kParamCount; ++i) {
    if (!mask[i]) continue;
    for (int j = i; j < covmodel::kParamCount; ++j) {
      if (!mask[j]) continue;
      const double v = 0.5 * ws.weighted[static_cast<std::size_t>(i)]
                                 .cwiseProduct(ws.weighted_t[static_cast<std::size_t>(j)])
                                 .sum();
      out.fisher(i, j) = v;
      out.fisher(j, i) = v;
    }
  }
  return out;
}

Eigen::Matrix4d fisher_information(const PatchGeometry& geometry, const Theta& theta) {
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(geometry.size());
  auto eval = evaluate(zero, geometry, theta, covmodel::kAllParams);
  if (!eval) throw DegenerateModel("covariance not factorizable");
  return eval->fisher;
}

double crlb_from_fisher(const Eigen::Matrix4d& fisher, Target target, double hurst_prior_sd) {
  if (!(hurst_prior_sd > 0.0)) throw InvalidArgument("hurst prior sd must be > 0");
  const int idx[3] = {0, 1, static_cast<int>(param_of(target))};
  Eigen::Matrix3d reduced;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) reduced(a, b) = fisher(idx[a], idx[b]);
  reduced(1, 1) += 1.0 / (hurst_prior_sd * hurst_prior_sd);

  // Equilibrate before testing definiteness so parameter units do not matter.
  const Eigen::Vector3d diag = reduced.diagonal();
  if (!(diag.array() > 0.0).all() || !reduced.allFinite())
    throw UnboundedCrlb("reduced information has a zero diagonal entry");
  const Eigen::Vector3d scale = diag.cwiseSqrt().cwiseInverse();
  const Eigen::Matrix3d normalized = scale.asDiagonal() * reduced * scale.asDiagonal();
  Eigen::LLT<Eigen::Matrix3d> llt(normalized);
  if (llt.info() != Eigen::Success || llt.rcond() < 1e-13)
    throw UnboundedCrlb("reduced information is singular");
  const Eigen::Matrix3d inv = llt.solve(Eigen::Matrix3d::Identity());
  const double variance = inv(2, 2) * scale[2] * scale[2];
  if (!(variance > 0.0) || !std::isfinite(variance)) throw UnboundedCrlb("non-positive bound");
  return std::sqrt(variance);
}

double crlb(const PatchGeometry& geometry, const Theta& theta, Target target,
            double hurst_prior_sd) {
  return crlb_from_fisher(fisher_information(geometry, theta), target, hurst_prior_sd);
}

double combine_crlb(std::span<const double> sds) {
  double information = 0.0;
  for (double sd : sds) {
    if (sd > 0.0 && std::isfinite(sd)) information += 1.0 / (sd * sd);
  }
  if (information <= 0.0) return std::numeric_limits<double>::infinity();
  return 1.0 / std::sqrt(information);
}

// ---------------------------------------------------------------------------
// Starting values

namespace {

std::map<std::pair<int, int>, double> window_of(const Eigen::VectorXd& z, const Coords& coords) {
  std::map<std::pair<int, int>, double> window;
  window[{0, 0}] = 0.0;
  for (std::size_t k = 0; k < coords.size(); ++k)
    window[{coords[k].t, coords[k].s}] = z[static_cast<Eigen::Index>(k)];
  return window;
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(v.begin(), mid);
  return 0.5 * (lower + upper);
}

double mean_sq_unit_increment(const Eigen::VectorXd& z, const Coords& coords) {
  const auto window = window_of(z, coords);
  double sum = 0.0;
  int count = 0;
  for (const auto& [key, v] : window) {
    for (auto [dt, ds] : {std::pair{1, 0}, std::pair{0, 1}}) {
      auto it = window.find({key.first + dt, key.second + ds});
      if (it == window.end()) continue;
      sum += (it->second - v) * (it->second - v);
      ++count;
    }
  }
  return count > 0 ? sum / count : 0.0;
}

}  // namespace

double laplacian_mad_sigma_e2(const Eigen::VectorXd& increments, const Coords& coords) {
  const auto window = window_of(increments, coords);
  std::vector<double> lap;
  for (const auto& [key, v] : window) {
    double sum = 0.0;
    bool complete = true;
    for (auto [dt, ds] : {std::pair{1, 0}, std::pair{-1, 0}, std::pair{0, 1}, std::pair{0, -1}}) {
      auto it = window.find({key.first + dt, key.second + ds});
      if (it == window.end()) {
        complete = false;
        break;
      }
      sum += it->second;
    }
    if (complete) lap.push_back(4.0 * v - sum);
  }
  if (lap.empty()) return 0.0;
  const double med = median_of(lap);
  for (double& x : lap) x = std::abs(x - med);
  const double sigma_lap = 1.4826 * median_of(lap);
  // A 5-point Laplacian of white noise has variance 20 sigma_e^2.
  return sigma_lap * sigma_lap / 20.0;
}

double moment_sigma_x2(const Eigen::VectorXd& increments, const Coords& coords,
                       const NoiseParams& noise) {
  const double msq = mean_sq_unit_increment(increments, coords);
  const double rho1 = covmodel::noise_correlation_sq(1.0, noise.sigma_corr2, noise.shape);
  return std::max(0.0, msq - noise.sigma_e2 * (2.0 - 2.0 * rho1));
}

// ---------------------------------------------------------------------------
// Estimators

namespace {

double variance_scale(const Eigen::VectorXd& z) {
  const double msq = z.size() > 0 ? z.squaredNorm() / static_cast<double>(z.size()) : 0.0;
  return 1e-6 * std::max(msq, 1e-12);
}

constexpr double kInf = std::numeric_limits<double>::infinity();

double prior_sd(const HurstPrior& prior) { return std::max(prior.sd, kHurstPriorSdFloor); }

double prior_penalty(double hurst, const HurstPrior& prior) {
  const double sd = prior_sd(prior);
  return (hurst - prior.mean) * (hurst - prior.mean) / (2.0 * sd * sd);
}

struct GroupStart {
  double value = 0.0;
  std::vector<FbmParams> texture;
};

GroupFit fit_group(std::span<const GroupMember> members, const PatchGeometry& geometry,
                   Target target, NoiseShape shape, const GroupStart& start) {
  const auto k = static_cast<Eigen::Index>(members.size());
  const Param target_param = param_of(target);
  const int t = static_cast<int>(target_param);
  ParamMask mask{};
  mask[0] = mask[1] = true;
  mask[static_cast<std::size_t>(t)] = true;

  auto theta_of = [&](const Eigen::VectorXd& x, Eigen::Index v) {
    Theta theta;
    theta.noise.shape = shape;
    theta.fbm.sigma_x2 = x[1 + 2 * v];
    theta.fbm.hurst = x[2 + 2 * v];
    theta.set(target_param, x[0]);
    theta.set(other_param(target), members[static_cast<std::size_t>(v)].fixed_other);
    return theta;
  };

  ScoringObjective objective = [&](const Eigen::VectorXd& x,
                                   bool with_derivatives) -> std::optional<ScoringPoint> {
    ScoringPoint point;
    const Eigen::Index dim = x.size();
    if (with_derivatives) {
      point.gradient = Eigen::VectorXd::Zero(dim);
      point.information = Eigen::MatrixXd::Zero(dim, dim);
    }
    for (Eigen::Index v = 0; v < k; ++v) {
      const GroupMember& m = members[static_cast<std::size_t>(v)];
      const Theta theta = theta_of(x, v);
      const double penalty = prior_penalty(theta.fbm.hurst, m.prior);
      if (!with_derivatives) {
        auto ll = try_log_likelihood(*m.increments, geometry, theta);
        if (!ll) return std::nullopt;
        point.value += *ll - penalty;
        continue;
      }
      auto eval = evaluate(*m.increments, geometry, theta, mask);
      if (!eval) return std::nullopt;
      point.value += eval->log_likelihood - penalty;
      const Eigen::Index a = 1 + 2 * v;
      const Eigen::Index h = 2 + 2 * v;
      const double sd = prior_sd(m.prior);
      point.gradient[0] += eval->score[t];
      point.gradient[a] = eval->score[0];
      point.gradient[h] = eval->score[1] - (theta.fbm.hurst - m.prior.mean) / (sd * sd);
      point.information(0, 0) += eval->fisher(t, t);
      point.information(0, a) = point.information(a, 0) = eval->fisher(t, 0);
      point.information(0, h) = point.information(h, 0) = eval->fisher(t, 1);
      point.information(a, a) = eval->fisher(0, 0);
      point.information(a, h) = point.information(h, a) = eval->fisher(0, 1);
      point.information(h, h) = eval->fisher(1, 1) + 1.0 / (sd * sd);
    }
    return point;
  };

  const Eigen::Index dim = 1 + 2 * k;
  Eigen::VectorXd x0(dim), lower(dim), upper(dim), scale(dim);
  double z_scale = 0.0;
  for (const auto& m : members) z_scale = std::max(z_scale, variance_scale(*m.increments));
  x0[0] = start.value;
  if (target == Target::sigma_e2) {
    lower[0] = 0.0;
    upper[0] = kInf;
    scale[0] = z_scale;
  } else {
    lower[0] = kSigmaCorr2Floor;
    upper[0] = kSigmaCorr2Ceiling;
    scale[0] = kSigmaCorr2Floor;
  }
  for (Eigen::Index v = 0; v < k; ++v) {
    x0[1 + 2 * v] = start.texture[static_cast<std::size_t>(v)].sigma_x2;
    x0[2 + 2 * v] = start.texture[static_cast<std::size_t>(v)].hurst;
    lower[1 + 2 * v] = 0.0;
    upper[1 + 2 * v] = kInf;
    scale[1 + 2 * v] = z_scale;
    lower[2 + 2 * v] = kHurstMin;
    upper[2 + 2 * v] = kHurstMax;
    scale[2 + 2 * v] = 1e-3;
  }

  const ScoringResult res = maximize_scoring(objective, x0, lower, upper, scale);

  GroupFit fit;
  fit.value = res.x[0];
  fit.objective = res.value;
  fit.iterations = res.iterations;
  fit.converged = res.converged;
  fit.texture.resize(static_cast<std::size_t>(k));
  fit.member_crlb_sd.resize(static_cast<std::size_t>(k), kInf);
  for (Eigen::Index v = 0; v < k; ++v) {
    const Theta theta = theta_of(res.x, v);
    fit.texture[static_cast<std::size_t>(v)] = theta.fbm;
    auto eval = evaluate(*members[static_cast<std::size_t>(v)].increments, geometry, theta, mask);
    if (!eval) continue;
    try {
      fit.member_crlb_sd[static_cast<std::size_t>(v)] =
          crlb_from_fisher(eval->fisher, target, prior_sd(members[static_cast<std::size_t>(v)].prior));
    } catch (const UnboundedCrlb&) {
    }
  }
  fit.crlb_sd = combine_crlb(fit.member_crlb_sd);
  return fit;
}

bool all_zero(const Eigen::VectorXd& z) { return z.size() == 0 || z.cwiseAbs().maxCoeff() == 0.0; }

GroupStart default_start(std::span<const GroupMember> members, const PatchGeometry& geometry,
                         Target target, NoiseShape shape) {
  GroupStart start;
  double e2_sum = 0.0;
  for (const auto& m : members) e2_sum += laplacian_mad_sigma_e2(*m.increments, geometry.coords());
  const double e2_mean = e2_sum / static_cast<double>(members.size());
  start.value = target == Target::sigma_e2 ? e2_mean : 0.25;
  for (const auto& m : members) {
    NoiseParams noise;
    noise.shape = shape;
    noise.sigma_e2 = target == Target::sigma_e2 ? e2_mean : m.fixed_other;
    noise.sigma_corr2 = target == Target::sigma_e2 ? m.fixed_other : 0.25;
    start.texture.push_back(m.start.value_or(
        FbmParams{moment_sigma_x2(*m.increments, geometry.coords(), noise),
                  std::clamp(m.prior.mean, kHurstMin, kHurstMax)}));
  }
  if (target == Target::sigma_e2 && start.value <= 0.0) {
    double msq = 0.0;
    for (const auto& m : members) msq = std::max(msq, m.increments->squaredNorm());
    start.value = std::max(1e-6 * msq / static_cast<double>(geometry.size()), 1e-12);
  }
  return start;
}

}  // namespace

FitResult estimate_texture(const Eigen::VectorXd& increments, const PatchGeometry& geometry,
                           const NoiseParams& noise, std::optional<FbmParams> start) {
  if (increments.size() != geometry.size())
    throw InvalidArgument("increment count does not match patch geometry");
  Theta base;
  base.noise = noise;
  ParamMask mask{true, true, false, false};

  ScoringObjective objective = [&](const Eigen::VectorXd& x,
                                   bool with_derivatives) -> std::optional<ScoringPoint> {
    Theta theta = base;
    theta.fbm = {x[0], x[1]};
    ScoringPoint point;
    if (!with_derivatives) {
      auto ll = try_log_likelihood(increments, geometry, theta);
      if (!ll) return std::nullopt;
      point.value = *ll;
      return point;
    }
    auto eval = evaluate(increments, geometry, theta, mask);
    if (!eval) return std::nullopt;
    point.value = eval->log_likelihood;
    point.gradient = eval->score.head<2>();
    point.information = eval->fisher.topLeftCorner<2, 2>();
    return point;
  };

  const FbmParams init =
      start.value_or(FbmParams{moment_sigma_x2(increments, geometry.coords(), noise), 0.5});
  Eigen::Vector2d x0(init.sigma_x2, std::clamp(init.hurst, kHurstMin, kHurstMax));
  Eigen::Vector2d lower(0.0, kHurstMin), upper(kInf, kHurstMax);
  Eigen::Vector2d scale(variance_scale(increments), 1e-3);
  const ScoringResult res = maximize_scoring(objective, x0, lower, upper, scale);

  FitResult out;
  out.theta = base;
  out.theta.fbm = {res.x[0], res.x[1]};
  out.objective = res.value;
  out.iterations = res.iterations;
  out.converged = res.converged;
  return out;
}

FitResult estimate_error_parameter(const Eigen::VectorXd& increments,
                                   const PatchGeometry& geometry, Target target,
                                   const HurstPrior& prior, double fixed_other, NoiseShape shape,
                                   std::optional<Theta> start) {
  if (increments.size() != geometry.size())
    throw InvalidArgument("increment count does not match patch geometry");
  FitResult out;
  out.theta.noise.shape = shape;
  out.theta.set(other_param(target), fixed_other);

  if (target == Target::sigma_e2 && all_zero(increments)) {
    // Likelihood is unbounded as every variance goes to zero: boundary estimate.
    out.theta.fbm = {0.0, std::clamp(prior.mean, kHurstMin, kHurstMax)};
    out.theta.noise.sigma_e2 = 0.0;
    out.converged = true;
    return out;
  }

  const GroupMember member{&increments, prior, fixed_other, std::nullopt};
  const std::span<const GroupMember> members(&member, 1);
  GroupStart init = default_start(members, geometry, target, shape);
  if (start) {
    init.value = start->get(param_of(target));
    init.texture[0] = start->fbm;
  }
  const GroupFit fit = fit_group(members, geometry, target, shape, init);
  out.theta.fbm = fit.texture[0];
  out.theta.set(param_of(target), fit.value);
  out.objective = fit.objective;
  out.iterations = fit.iterations;
  out.converged = fit.converged;
  return out;
}

FitResult estimate_sigma_e2(const Eigen::VectorXd& increments, const PatchGeometry& geometry,
                            const HurstPrior& prior, double sigma_corr2, NoiseShape shape) {
  return estimate_error_parameter(increments, geometry, Target::sigma_e2, prior, sigma_corr2,
                                  shape);
}

FitResult estimate_sigma_corr2(const Eigen::VectorXd& increments, const PatchGeometry& geometry,
                               const HurstPrior& prior, double sigma_e2, NoiseShape shape) {
  return estimate_error_parameter(increments, geometry, Target::sigma_corr2, prior, sigma_e2,
                                  shape);
}

GroupFit estimate_group(std::span<const GroupMember> members, const PatchGeometry& geometry,
                        Target target, NoiseShape shape, std::optional<double> start_value) {
  if (members.empty()) throw InvalidArgument("group must contain at least one patch");
  for (const auto& m : members) {
    if (m.increments == nullptr || m.increments->size() != geometry.size())
      throw InvalidArgument("group member increments do not match patch geometry");
  }
  if (target == Target::sigma_e2 &&
      std::all_of(members.begin(), members.end(), [](const GroupMember& m) { return all_zero(*m.increments); })) {
    GroupFit fit;
    fit.converged = true;
    for (const auto& m : members) {
      fit.texture.push_back({0.0, std::clamp(m.prior.mean, kHurstMin, kHurstMax)});
      fit.member_crlb_sd.push_back(kInf);
    }
    fit.crlb_sd = kInf;
    return fit;
  }
  GroupStart start = default_start(members, geometry, target, shape);
  if (start_value) start.value = *start_value;
  return fit_group(members, geometry, target, shape, start);
}

}  // namespace demblind::likelihood
