#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "demblind/covmodel.hpp"
#include "demblind/raster.hpp"
#include "demblind/regression.hpp"

namespace demblind::simulate {

struct TruthModel {
  regression::ModelKind kind = regression::ModelKind::constant;
  Eigen::VectorXd coeffs = Eigen::VectorXd::Constant(1, 1.0);

  double operator()(const raster::PredictorVector& p) const {
    return regression::predict(kind, coeffs, p);
  }
};

/// Variance model 1.0293 + 25.6667/N + 4.8991e-7 Z^2 + 6.1069e-6 Z^2/N (m^2).
TruthModel reference_variance_model();
/// Correlation-width model 0.1937 + 1.7786e-8 Z^2 (pixels^2).
TruthModel reference_corr_model();

/// Tiles are laid out as square regions of region_patches x region_patches
/// patch windows. Each region shares one stacking number and a base
/// elevation; each window carries its own fBm terrain and noise draw.
struct SimulationConfig {
  std::uint64_t seed = 1;
  int tiles = 4;
  int patches_per_side = 9;  // windows per tile side
  int region_patches = 3;    // windows per region side
  int half_size = 5;
  double cell_size = 1.0;
  int nstk_min = 1;
  int nstk_max = 50;
  double z_min = 0.0;
  double z_max = 6000.0;
  double z_jitter = 20.0;  // per-window uniform offset around the region elevation
  double snr_log10_min = -4.0;
  double snr_log10_max = 1.0;
  double pure_noise_fraction = 0.2;  // windows with no terrain signal
  double hurst_min = 0.4;            // per-tile Hurst exponent range
  double hurst_max = 0.8;
  covmodel::NoiseShape shape = covmodel::NoiseShape::gaussian;
  TruthModel variance = reference_variance_model();
  TruthModel corr_width = reference_corr_model();

  /// Throws InvalidArgument.
  void validate() const;
  int tile_size() const { return patches_per_side * (2 * half_size + 1); }
};

struct WindowTruth {
  int tile = 0;
  raster::TilePosition centre;
  raster::PredictorVector predictor;  // nominal stacking number and base elevation
  double sigma_x2 = 0.0;
  double hurst = 0.5;
  double sigma_e2 = 0.0;
  double sigma_corr2 = 0.25;
};

struct SimulatedTile {
  raster::RasterTile dem;
  raster::RasterTile qa;
  double hurst = 0.5;
};

struct Simulation {
  std::vector<SimulatedTile> tiles;
  std::vector<WindowTruth> windows;
};

/// Deterministic in the seed; each window uses its own derived sub-seed.
Simulation simulate(const SimulationConfig& config);

/// Sub-seed for a stream identified by (a, b) under a master seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace demblind::simulate
