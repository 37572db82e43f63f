#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "demblind/covmodel.hpp"
#include "demblind/likelihood.hpp"
#include "demblind/raster.hpp"
#include "demblind/regression.hpp"

namespace demblind::pipeline {

using likelihood::Target;
using raster::PredictorVector;
using raster::TilePosition;

struct PipelineConfig {
  int patch_half_size = 5;
  double r_ha_threshold = 0.125;
  int group_size_cap = 15;
  double sn_ratio_ti = 2.0;
  std::array<double, 2> predictor_weights{1.0, 0.01};  // per N_stk unit, per metre
  int max_iterations = 15;
  double shepard_power = 2.0;
  covmodel::NoiseShape shape = covmodel::NoiseShape::gaussian;
  int m_choice = 0;  // elevation exponent of the refit candidates: 1, 2, or 0 for both
  double t_min = 10.0;
  double convergence_tol = 0.01;
  int max_patches_per_tile = 10000;

  /// Throws InvalidArgument.
  void validate() const;
};

struct TileInput {
  raster::RasterTile dem;
  raster::RasterTile qa;
};

/// r_HA = crlb / s for the target parameter s; +infinity when s <= 0 or the
/// bound does not exist.
double homogeneity_index(const covmodel::PatchGeometry& geometry, const covmodel::Theta& theta,
                         Target target, double hurst_prior_sd);

struct TiEstimate {
  TilePosition position;
  double hurst = 0.5;
};

inline constexpr double kFallbackHurst = 0.5;
inline constexpr double kFallbackHurstSd = 0.25;
inline constexpr double kHurstSdFloor = 1e-3;

/// Shepard inverse-distance interpolation. Returns kFallbackHurst for an
/// empty set and the TI value itself on an exact hit.
double interpolate_hurst(std::span<const TiEstimate> ti, const TilePosition& query,
                         double power = 2.0);

/// Root-mean-square leave-one-out interpolation residual; kFallbackHurstSd
/// with fewer than three estimates. Not floored.
double hurst_interp_error_sd(std::span<const TiEstimate> ti, double power = 2.0);

/// Distance in weighted predictor space.
double predictor_distance(const PredictorVector& a, const PredictorVector& b,
                          const std::array<double, 2>& weights);

struct NIGroup {
  std::vector<int> patch_ids;
  std::array<long long, 2> cell{0, 0};
  double r_ha_combined = 0.0;
  PredictorVector mean_predictor;
};

struct GroupingStats {
  int cells = 0;
  int candidates = 0;      // patches with finite r_HA
  int grouped = 0;         // patches in accepted groups
  int discarded_cap = 0;   // groups that hit the size cap first
  int leftover = 0;        // trailing patches that never reached the threshold
};

/// Greedy grouping inside unit boxes of weighted predictor space. `value`
/// holds the current parameter value of each patch, used to turn combined
/// CRLBs back into an index. Patches with infinite r_HA are ignored.
std::vector<NIGroup> group_patches(std::span<const PredictorVector> predictors,
                                   std::span<const double> r_ha, std::span<const double> value,
                                   const PipelineConfig& config, GroupingStats* stats = nullptr);

struct PassDiagnostics {
  int candidates = 0;
  int groups = 0;
  int discarded_cap = 0;
  int leftover = 0;
  int failed_fits = 0;
  std::optional<regression::ModelKind> model;
  std::vector<double> coeffs;
};

struct IterationDiagnostics {
  int iteration = 0;
  int ti_patches = 0;
  int tiles_without_ti = 0;
  PassDiagnostics variance;
  PassDiagnostics corr_width;
};

struct Diagnostics {
  std::string status = "ok";  // ok | no_reliable_patches | no_ni_groups
  int tiles = 0;
  raster::ExtractionStats extraction;
  int reliable_patches = 0;
  int ti_patches = 0;
  int ni_patches_variance = 0;
  int ni_patches_corr_width = 0;
  int groups_variance = 0;
  int groups_corr_width = 0;
  int iterations = 0;
  bool converged = false;
  PredictorVector predictor_min;
  PredictorVector predictor_max;
  std::vector<IterationDiagnostics> history;
};

struct PipelineResult {
  std::vector<regression::GroupEstimate> variance;
  std::vector<regression::GroupEstimate> corr_width;
  Diagnostics diagnostics;
};

PipelineResult run_pipeline(std::span<const TileInput> tiles, const PipelineConfig& config);

/// Same as run_pipeline on already extracted patches; `tile_of` gives the
/// tile index of each patch for the Hurst interpolation.
PipelineResult run_pipeline_on_patches(std::span<const raster::Patch> patches,
                                       std::span<const int> tile_of, const PipelineConfig& config);

}  // namespace demblind::pipeline
