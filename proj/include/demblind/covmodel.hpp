#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace demblind::covmodel {

enum class NoiseShape { gaussian, exponential };

/// Free parameters of the increment model, in Fisher-matrix order.
enum class Param { sigma_x2 = 0, hurst = 1, sigma_e2 = 2, sigma_corr2 = 3 };
inline constexpr int kParamCount = 4;

std::string_view to_string(NoiseShape shape);
NoiseShape parse_noise_shape(std::string_view name);

/// fBm terrain: amplitude variance on unit lag and Hurst exponent in (0,1).
struct FbmParams {
  double sigma_x2 = 0.0;
  double hurst = 0.5;
};

/// Stationary isotropic measurement error. sigma_corr2 is in pixels^2.
struct NoiseParams {
  double sigma_e2 = 0.0;
  double sigma_corr2 = 0.25;
  NoiseShape shape = NoiseShape::gaussian;
};

struct Theta {
  FbmParams fbm;
  NoiseParams noise;

  double get(Param p) const;
  void set(Param p, double value);
  /// Throws InvalidArgument if a component invariant is violated.
  void validate() const;
};

/// Pixel offset (t, s) relative to the patch centre.
struct Offset {
  int t = 0;
  int s = 0;
  friend bool operator==(const Offset&, const Offset&) = default;
};

using Coords = std::vector<Offset>;

/// Offsets of an N x N patch (N = 2*half_size+1) in raster order, centre
/// excluded: N^2 - 1 entries.
Coords square_patch_coords(int half_size);

/// Unit-lag fBm increment covariance <dZ(t1,s1) dZ(t2,s2)>.
double fbm_increment_cov(double t1, double s1, double t2, double s2, const FbmParams& fbm);

/// Noise covariance at lag d (pixels).
double noise_cov(double d, const NoiseParams& noise);

/// Correlation coefficient of the noise at squared lag d2 and its derivative
/// with respect to sigma_corr2.
double noise_correlation_sq(double d2, double sigma_corr2, NoiseShape shape);
double noise_correlation_sq_dcorr(double d2, double sigma_corr2, NoiseShape shape);

/// Precomputed integer lag tables for a fixed coordinate list. All covariance
/// evaluations go through lookup tables indexed by squared lag, so a matrix
/// costs O(max_sq) transcendental calls instead of O(n^2).
class PatchGeometry {
 public:
  explicit PatchGeometry(Coords coords);
  static PatchGeometry square(int half_size);

  const Coords& coords() const { return coords_; }
  Eigen::Index size() const { return static_cast<Eigen::Index>(coords_.size()); }
  int radial_sq(Eigen::Index k) const { return radial_sq_[static_cast<std::size_t>(k)]; }
  int lag_sq(Eigen::Index i, Eigen::Index j) const { return lag_sq_(i, j); }
  const int* lag_sq_column(Eigen::Index j) const { return lag_sq_.col(j).data(); }
  int max_sq() const { return max_sq_; }

 private:
  Coords coords_;
  std::vector<int> radial_sq_;
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic> lag_sq_;
  int max_sq_ = 0;
};

/// Covariance of observed increments: fBm part plus noise increment part.
Eigen::MatrixXd observed_cov_matrix(const PatchGeometry& geometry, const Theta& theta);
Eigen::MatrixXd observed_cov_matrix(const Coords& coords, const Theta& theta);

/// Elementwise partial derivative of observed_cov_matrix in one parameter.
Eigen::MatrixXd cov_derivative(const PatchGeometry& geometry, const Theta& theta, Param which);
Eigen::MatrixXd cov_derivative(const Coords& coords, const Theta& theta, Param which);

/// Covariance and the requested derivatives in one pass.
struct CovarianceBundle {
  Eigen::MatrixXd cov;
  std::array<Eigen::MatrixXd, kParamCount> derivative;  // empty when not requested
};

using ParamMask = std::array<bool, kParamCount>;
inline constexpr ParamMask kAllParams{true, true, true, true};

CovarianceBundle evaluate_covariance(const PatchGeometry& geometry, const Theta& theta,
                                     const ParamMask& derivatives);
/// Same, reusing the storage already held by `out`. Unrequested derivative
/// slots are left untouched.
void evaluate_covariance(const PatchGeometry& geometry, const Theta& theta,
                         const ParamMask& derivatives, CovarianceBundle& out);

/// Pure fBm (unit amplitude) and unit-variance noise-increment matrices.
Eigen::MatrixXd fbm_unit_matrix(const PatchGeometry& geometry, double hurst);
Eigen::MatrixXd noise_unit_matrix(const PatchGeometry& geometry, double sigma_corr2,
                                  NoiseShape shape);

/// Diagonal jitter applied once before every Cholesky factorization.
double jitter_for(const Eigen::MatrixXd& cov);

/// Draws one Gaussian increment vector with covariance
/// observed_cov_matrix(geometry, theta). Deterministic in seed.
Eigen::VectorXd sample_patch(const PatchGeometry& geometry, const Theta& theta, std::uint64_t seed);

/// Lower Cholesky factor of a covariance matrix with jitter; all-zero factor
/// for an all-zero matrix. Throws DegenerateModel otherwise.
Eigen::MatrixXd sampling_factor(const Eigen::MatrixXd& cov);

}  // namespace demblind::covmodel
