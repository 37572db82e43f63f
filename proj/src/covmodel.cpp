#include "demblind/covmodel.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "demblind/error.hpp"

namespace demblind::covmodel {

std::string_view to_string(NoiseShape shape) {
  return shape == NoiseShape::gaussian ? "gaussian" : "exponential";
}

NoiseShape parse_noise_shape(std::string_view name) {
  if (name == "gaussian") return NoiseShape::gaussian;
  if (name == "exponential") return NoiseShape::exponential;
  throw InvalidArgument("unknown noise shape '" + std::string(name) + "'");
}

double Theta::get(Param p) const {
  switch (p) {
    case Param::sigma_x2: return fbm.sigma_x2;
    case Param::hurst: return fbm.hurst;
    case Param::sigma_e2: return noise.sigma_e2;
    case Param::sigma_corr2: return noise.sigma_corr2;
  }
  return 0.0;
}

void Theta::set(Param p, double value) {
  switch (p) {
    case Param::sigma_x2: fbm.sigma_x2 = value; break;
    case Param::hurst: fbm.hurst = value; break;
    case Param::sigma_e2: noise.sigma_e2 = value; break;
    case Param::sigma_corr2: noise.sigma_corr2 = value; break;
  }
}

void Theta::validate() const {
  if (!(fbm.sigma_x2 >= 0.0) || !std::isfinite(fbm.sigma_x2))
    throw InvalidArgument("sigma_x2 must be finite and >= 0");
  if (!(fbm.hurst > 0.0 && fbm.hurst < 1.0)) throw InvalidArgument("hurst must lie in (0,1)");
  if (!(noise.sigma_e2 >= 0.0) || !std::isfinite(noise.sigma_e2))
    throw InvalidArgument("sigma_e2 must be finite and >= 0");
  if (!(noise.sigma_corr2 > 0.0) || !std::isfinite(noise.sigma_corr2))
    throw InvalidArgument("sigma_corr2 must be finite and > 0");
}

Coords square_patch_coords(int half_size) {
  if (half_size < 1) throw InvalidArgument("patch half size must be >= 1");
  Coords coords;
  const int n = 2 * half_size + 1;
  coords.reserve(static_cast<std::size_t>(n * n - 1));
  for (int s = -half_size; s <= half_size; ++s) {
    for (int t = -half_size; t <= half_size; ++t) {
      if (t == 0 && s == 0) continue;
      coords.push_back({t, s});
    }
  }
  return coords;
}

namespace {

// r2^H with the convention 0^H = 0.
double power_term(double r2, double hurst) { return r2 > 0.0 ? std::pow(r2, hurst) : 0.0; }

// d/dH of r2^H; zero at r2 = 0 by continuity.
double power_log_term(double r2, double hurst) {
  return r2 > 0.0 ? std::pow(r2, hurst) * std::log(r2) : 0.0;
}

std::vector<double> table(int max_sq, auto&& fn) {
  std::vector<double> out(static_cast<std::size_t>(max_sq) + 1);
  for (int q = 0; q <= max_sq; ++q) out[static_cast<std::size_t>(q)] = fn(static_cast<double>(q));
  return out;
}

// Fills m(i,j) = scale * (a[r_i] + a[r_j] - b[lag_ij]), column by column.
void fill_increment(const PatchGeometry& g, const std::vector<double>& radial,
                    const std::vector<double>& lag, double scale, Eigen::MatrixXd& m) {
  const Eigen::Index n = g.size();
  m.resize(n, n);
  std::vector<double> rad(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) rad[static_cast<std::size_t>(i)] = radial[static_cast<std::size_t>(g.radial_sq(i))];
  for (Eigen::Index j = 0; j < n; ++j) {
    const double rj = rad[static_cast<std::size_t>(j)];
    double* col = m.col(j).data();
    const int* lag_col = g.lag_sq_column(j);
    for (Eigen::Index i = 0; i < n; ++i) {
      col[i] = scale * (rad[static_cast<std::size_t>(i)] + rj - lag[static_cast<std::size_t>(lag_col[i])]);
    }
  }
}

Eigen::MatrixXd increment_matrix(const PatchGeometry& g, const std::vector<double>& radial,
                                 const std::vector<double>& lag, double scale) {
  Eigen::MatrixXd m;
  fill_increment(g, radial, lag, scale, m);
  return m;
}

}  // namespace

double fbm_increment_cov(double t1, double s1, double t2, double s2, const FbmParams& fbm) {
  const double r1 = t1 * t1 + s1 * s1;
  const double r2 = t2 * t2 + s2 * s2;
  const double dt = t1 - t2;
  const double ds = s1 - s2;
  return 0.5 * fbm.sigma_x2 *
         (power_term(r1, fbm.hurst) + power_term(r2, fbm.hurst) -
          power_term(dt * dt + ds * ds, fbm.hurst));
}

double noise_correlation_sq(double d2, double sigma_corr2, NoiseShape shape) {
  if (shape == NoiseShape::gaussian) return std::exp(-d2 / (2.0 * sigma_corr2));
  return std::exp(-std::sqrt(d2 / sigma_corr2));
}

double noise_correlation_sq_dcorr(double d2, double sigma_corr2, NoiseShape shape) {
  if (d2 == 0.0) return 0.0;
  if (shape == NoiseShape::gaussian) {
    return d2 / (2.0 * sigma_corr2 * sigma_corr2) * std::exp(-d2 / (2.0 * sigma_corr2));
  }
  const double d = std::sqrt(d2);
  const double sc = std::sqrt(sigma_corr2);
  return std::exp(-d / sc) * d / (2.0 * sigma_corr2 * sc);
}

double noise_cov(double d, const NoiseParams& noise) {
  return noise.sigma_e2 * noise_correlation_sq(d * d, noise.sigma_corr2, noise.shape);
}

PatchGeometry::PatchGeometry(Coords coords) : coords_(std::move(coords)) {
  const auto n = static_cast<Eigen::Index>(coords_.size());
  radial_sq_.resize(coords_.size());
  lag_sq_.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Offset& a = coords_[static_cast<std::size_t>(i)];
    if (a.t == 0 && a.s == 0) throw InvalidArgument("patch coordinates must exclude the centre");
    radial_sq_[static_cast<std::size_t>(i)] = a.t * a.t + a.s * a.s;
    max_sq_ = std::max(max_sq_, radial_sq_[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < n; ++j) {
      const Offset& b = coords_[static_cast<std::size_t>(j)];
      const int dt = a.t - b.t;
      const int ds = a.s - b.s;
      lag_sq_(i, j) = dt * dt + ds * ds;
      max_sq_ = std::max(max_sq_, lag_sq_(i, j));
    }
  }
}

PatchGeometry PatchGeometry::square(int half_size) {
  return PatchGeometry(square_patch_coords(half_size));
}

Eigen::MatrixXd fbm_unit_matrix(const PatchGeometry& geometry, double hurst) {
  const auto p = table(geometry.max_sq(), [&](double q) { return power_term(q, hurst); });
  return increment_matrix(geometry, p, p, 0.5);
}

Eigen::MatrixXd noise_unit_matrix(const PatchGeometry& geometry, double sigma_corr2,
                                  NoiseShape shape) {
  const auto rho =
      table(geometry.max_sq(), [&](double q) { return noise_correlation_sq(q, sigma_corr2, shape); });
  // rho(lag) + 1 - rho(r1) - rho(r2), written as (1/2 - rho(r1)) + (1/2 - rho(r2)) + rho(lag).
  std::vector<double> radial(rho.size());
  std::vector<double> lag(rho.size());
  for (std::size_t q = 0; q < rho.size(); ++q) {
    radial[q] = 0.5 - rho[q];
    lag[q] = -rho[q];
  }
  return increment_matrix(geometry, radial, lag, 1.0);
}

void evaluate_covariance(const PatchGeometry& geometry, const Theta& theta,
                         const ParamMask& derivatives, CovarianceBundle& out) {
  const int max_sq = geometry.max_sq();
  const double h = theta.fbm.hurst;
  const double c = theta.noise.sigma_corr2;
  const double x2 = theta.fbm.sigma_x2;
  const double e2 = theta.noise.sigma_e2;
  const NoiseShape shape = theta.noise.shape;

  const auto p = table(max_sq, [&](double q) { return power_term(q, h); });
  const auto rho = table(max_sq, [&](double q) { return noise_correlation_sq(q, c, shape); });
  // Noise increments: rho(lag) + 1 - rho(r1) - rho(r2) = (1/2 - rho(r1)) + (1/2 - rho(r2)) + rho(lag).
  std::vector<double> noise_radial(rho.size()), noise_lag(rho.size());
  std::vector<double> radial(rho.size()), lag(rho.size());
  for (std::size_t q = 0; q < rho.size(); ++q) {
    noise_radial[q] = 0.5 - rho[q];
    noise_lag[q] = -rho[q];
    radial[q] = 0.5 * x2 * p[q] + e2 * noise_radial[q];
    lag[q] = 0.5 * x2 * p[q] + e2 * noise_lag[q];
  }
  fill_increment(geometry, radial, lag, 1.0, out.cov);

  if (derivatives[static_cast<int>(Param::sigma_x2)]) fill_increment(geometry, p, p, 0.5, out.derivative[0]);
  if (derivatives[static_cast<int>(Param::hurst)]) {
    const auto pl = table(max_sq, [&](double q) { return power_log_term(q, h); });
    fill_increment(geometry, pl, pl, 0.5 * x2, out.derivative[1]);
  }
  if (derivatives[static_cast<int>(Param::sigma_e2)])
    fill_increment(geometry, noise_radial, noise_lag, 1.0, out.derivative[2]);
  if (derivatives[static_cast<int>(Param::sigma_corr2)]) {
    const auto drho =
        table(max_sq, [&](double q) { return noise_correlation_sq_dcorr(q, c, shape); });
    std::vector<double> neg(drho.size());
    for (std::size_t q = 0; q < drho.size(); ++q) neg[q] = -drho[q];
    // drho(lag) - drho(r1) - drho(r2)
    fill_increment(geometry, neg, neg, e2, out.derivative[3]);
  }
}

CovarianceBundle evaluate_covariance(const PatchGeometry& geometry, const Theta& theta,
                                     const ParamMask& derivatives) {
  CovarianceBundle out;
  evaluate_covariance(geometry, theta, derivatives, out);
  return out;
}

Eigen::MatrixXd observed_cov_matrix(const PatchGeometry& geometry, const Theta& theta) {
  return evaluate_covariance(geometry, theta, ParamMask{}).cov;
}

Eigen::MatrixXd observed_cov_matrix(const Coords& coords, const Theta& theta) {
  return observed_cov_matrix(PatchGeometry(coords), theta);
}

Eigen::MatrixXd cov_derivative(const PatchGeometry& geometry, const Theta& theta, Param which) {
  ParamMask mask{};
  mask[static_cast<int>(which)] = true;
  return std::move(evaluate_covariance(geometry, theta, mask).derivative[static_cast<int>(which)]);
}

Eigen::MatrixXd cov_derivative(const Coords& coords, const Theta& theta, Param which) {
  return cov_derivative(PatchGeometry(coords), theta, which);
}

double jitter_for(const Eigen::MatrixXd& cov) {
  if (cov.rows() == 0) return 0.0;
  return 1e-10 * cov.trace() / static_cast<double>(cov.rows());
}

Eigen::MatrixXd sampling_factor(const Eigen::MatrixXd& cov) {
  const Eigen::Index n = cov.rows();
  if (cov.isZero(0.0)) return Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd jittered = cov;
  jittered.diagonal().array() += jitter_for(cov);
  Eigen::LLT<Eigen::MatrixXd> llt(jittered);
  if (llt.info() != Eigen::Success) throw DegenerateModel("covariance is not positive definite");
  return llt.matrixL();
}

Eigen::VectorXd sample_patch(const PatchGeometry& geometry, const Theta& theta, std::uint64_t seed) {
  const Eigen::MatrixXd factor = sampling_factor(observed_cov_matrix(geometry, theta));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::VectorXd white(geometry.size());
  for (Eigen::Index i = 0; i < white.size(); ++i) white[i] = normal(rng);
  return factor * white;
}

}  // namespace demblind::covmodel
