#pragma once

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "demblind/covmodel.hpp"

namespace demblind::likelihood {

using covmodel::Param;
using covmodel::ParamMask;
using covmodel::PatchGeometry;
using covmodel::Theta;

/// Error parameter targeted by an estimator pass.
enum class Target { sigma_e2, sigma_corr2 };

std::string_view to_string(Target target);
Param param_of(Target target);
/// The error parameter held fixed while `target` is estimated.
Param other_param(Target target);

// Optimisation bounds for the natural parameters.
inline constexpr double kHurstMin = 1e-3;
inline constexpr double kHurstMax = 1.0 - 1e-3;
inline constexpr double kSigmaCorr2Floor = 1e-4;
inline constexpr double kSigmaCorr2Ceiling = 100.0;
inline constexpr double kHurstPriorSdFloor = 1e-3;

/// Gaussian log-likelihood of an increment vector under covariance `cov`,
/// constant term omitted. Uses a Cholesky factor with jitter.
/// Throws DegenerateModel when the factorization fails.
double log_likelihood(const Eigen::VectorXd& increments, const Eigen::MatrixXd& cov);
double log_likelihood(const Eigen::VectorXd& increments, const PatchGeometry& geometry,
                      const Theta& theta);

/// Log-likelihood together with its score and expected information with
/// respect to the parameters selected in `mask` (other entries are zero).
struct Evaluation {
  double log_likelihood = 0.0;
  Eigen::Vector4d score = Eigen::Vector4d::Zero();
  Eigen::Matrix4d fisher = Eigen::Matrix4d::Zero();
};

/// Returns nullopt when the covariance is not factorizable.
std::optional<Evaluation> evaluate(const Eigen::VectorXd& increments, const PatchGeometry& geometry,
                                   const Theta& theta, const ParamMask& mask);
std::optional<double> try_log_likelihood(const Eigen::VectorXd& increments,
                                         const PatchGeometry& geometry, const Theta& theta);

/// 4x4 Fisher information in (sigma_x2, hurst, sigma_e2, sigma_corr2) order.
Eigen::Matrix4d fisher_information(const PatchGeometry& geometry, const Theta& theta);

/// CRLB standard deviation of `target` from a full 4x4 information matrix:
/// the non-target error parameter is dropped, 1/prior_sd^2 is added to the
/// Hurst entry and the target variance is read off the inverse.
/// Throws UnboundedCrlb for a singular reduced matrix.
double crlb_from_fisher(const Eigen::Matrix4d& fisher, Target target, double hurst_prior_sd);
double crlb(const PatchGeometry& geometry, const Theta& theta, Target target,
            double hurst_prior_sd);

struct HurstPrior {
  double mean = 0.5;
  double sd = 0.25;
};

struct FitResult {
  Theta theta;
  double objective = 0.0;  // penalized log-likelihood at theta
  int iterations = 0;
  bool converged = false;
};

/// Moment-based starting values.
double laplacian_mad_sigma_e2(const Eigen::VectorXd& increments, const covmodel::Coords& coords);
double moment_sigma_x2(const Eigen::VectorXd& increments, const covmodel::Coords& coords,
                       const covmodel::NoiseParams& noise);

/// Maximizes the likelihood over (sigma_x2 >= 0, hurst) with the noise fixed.
FitResult estimate_texture(const Eigen::VectorXd& increments, const PatchGeometry& geometry,
                           const covmodel::NoiseParams& noise,
                           std::optional<covmodel::FbmParams> start = std::nullopt);

/// Maximizes the Hurst-penalized likelihood over (sigma_x2, hurst, target)
/// with the other error parameter held at `fixed_other`.
FitResult estimate_error_parameter(const Eigen::VectorXd& increments,
                                   const PatchGeometry& geometry, Target target,
                                   const HurstPrior& prior, double fixed_other,
                                   covmodel::NoiseShape shape,
                                   std::optional<Theta> start = std::nullopt);

FitResult estimate_sigma_e2(const Eigen::VectorXd& increments, const PatchGeometry& geometry,
                            const HurstPrior& prior, double sigma_corr2,
                            covmodel::NoiseShape shape = covmodel::NoiseShape::gaussian);
FitResult estimate_sigma_corr2(const Eigen::VectorXd& increments, const PatchGeometry& geometry,
                               const HurstPrior& prior, double sigma_e2,
                               covmodel::NoiseShape shape = covmodel::NoiseShape::gaussian);

/// One member of a patch group.
struct GroupMember {
  const Eigen::VectorXd* increments = nullptr;
  HurstPrior prior;
  double fixed_other = 0.0;  // the non-target error parameter for this patch
  std::optional<covmodel::FbmParams> start;  // warm start for the nuisance parameters
};

struct GroupFit {
  double value = 0.0;    // shared target estimate
  double crlb_sd = 0.0;  // harmonic combination of per-patch CRLBs at the estimate
  std::vector<covmodel::FbmParams> texture;  // per-member nuisance estimates
  std::vector<double> member_crlb_sd;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Joint estimate of one shared error parameter over independent patches
/// with per-patch texture nuisance parameters.
GroupFit estimate_group(std::span<const GroupMember> members, const PatchGeometry& geometry,
                        Target target, covmodel::NoiseShape shape,
                        std::optional<double> start_value = std::nullopt);

/// Harmonic combination (sum sd^-2)^-1/2 of independent CRLB SDs.
double combine_crlb(std::span<const double> sds);

}  // namespace demblind::likelihood
