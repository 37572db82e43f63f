#pragma once

#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "demblind/covmodel.hpp"

namespace demblind::raster {

enum class RasterFormat { ascii_grid, raw_f32 };

RasterFormat parse_format(std::string_view name);
std::string_view to_string(RasterFormat format);

/// Row-major grid of samples. Elevations are metres; QA rasters hold
/// stacking numbers.
struct RasterTile {
  int nrows = 0;
  int ncols = 0;
  double cell_size = 1.0;
  double nodata = -9999.0;
  std::vector<double> values;

  double at(int row, int col) const {
    return values[static_cast<std::size_t>(row) * static_cast<std::size_t>(ncols) +
                  static_cast<std::size_t>(col)];
  }
  double& at(int row, int col) {
    return values[static_cast<std::size_t>(row) * static_cast<std::size_t>(ncols) +
                  static_cast<std::size_t>(col)];
  }
  bool is_nodata(double v) const { return v == nodata; }

  /// Throws InvalidArgument when a structural invariant is broken.
  void validate() const;
};

RasterTile make_tile(int nrows, int ncols, double cell_size, double fill, double nodata = -9999.0);

/// Reads an ESRI ASCII grid, or a little-endian float32 payload with a JSON
/// sidecar at `path + ".json"`.
RasterTile load_raster(const std::filesystem::path& path, RasterFormat format);
void save_raster(const RasterTile& tile, const std::filesystem::path& path, RasterFormat format);

/// Block mean over factor x factor cells; trailing partial blocks are dropped
/// and a block with more than half nodata becomes nodata.
RasterTile block_downsample(const RasterTile& tile, int factor);

struct PredictorVector {
  double n_stk = 1.0;  // mean stacking number over the patch
  double z = 0.0;      // mean elevation, metres
};

struct TilePosition {
  int row = 0;  // centre pixel
  int col = 0;
};

/// Elevation increments of an N x N window relative to its centre pixel, in
/// the order of covmodel::square_patch_coords(half_size).
struct Patch {
  Eigen::VectorXd increments;
  int half_size = 5;
  PredictorVector predictor;
  TilePosition tile_position;

  covmodel::Coords coords() const { return covmodel::square_patch_coords(half_size); }
};

/// Stacking-number reliability: every value positive and max/min <= 2.
bool patch_is_reliable(std::span<const double> qa_window);

struct ExtractionStats {
  int windows = 0;     // candidate grid windows visited
  int nodata = 0;      // skipped for nodata in DEM or QA
  int unreliable = 0;  // rejected by patch_is_reliable
};

/// Non-overlapping (2*half_size+1)^2 windows on a regular grid anchored at
/// the top-left corner. When the grid holds more than max_count windows a
/// uniformly strided subgrid is used.
std::vector<Patch> extract_patches(const RasterTile& dem, const RasterTile& qa, int half_size,
                                   int max_count, ExtractionStats* stats = nullptr);

}  // namespace demblind::raster
