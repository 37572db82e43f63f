#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "demblind/pipeline.hpp"
#include "demblind/raster.hpp"
#include "demblind/simulate.hpp"

namespace demblind::config {

/// Ordered `key = value` entries; keys may repeat. Blank lines and lines
/// starting with '#' are ignored. Throws FormatError on a line without '='.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

KeyValues parse_key_values(std::string_view text);

struct TilePaths {
  std::filesystem::path dem;
  std::filesystem::path qa;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out_dir = ".";
  int downsample = 1;
  raster::RasterFormat format = raster::RasterFormat::ascii_grid;
  std::vector<TilePaths> tiles;
  std::filesystem::path estimates;  // groups CSV read by `fit`; defaults to out_dir/groups.csv
  std::vector<raster::PredictorVector> predictions;
  pipeline::PipelineConfig pipeline;
  simulate::SimulationConfig simulation;

  std::filesystem::path estimates_path() const {
    return estimates.empty() ? out_dir / "groups.csv" : estimates;
  }
};

/// Builds a RunConfig from entries; relative paths resolve against
/// `base_dir`. Unknown keys and bad values throw InvalidArgument; a
/// manifest that cannot be read throws IoError.
RunConfig parse_run_config(const KeyValues& entries, const std::filesystem::path& base_dir);

/// Reads and parses a config file.
RunConfig load_run_config(const std::filesystem::path& path);

/// Manifest lines hold `dem_path qa_path`, relative to the manifest.
std::vector<TilePaths> parse_manifest(std::string_view text, const std::filesystem::path& base_dir);

}  // namespace demblind::config
