#include "demblind/raster.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <sstream>
#include <string>

#include <json.hpp>

#include "demblind/error.hpp"
#include "demblind/fileio.hpp"

namespace demblind::raster {

RasterFormat parse_format(std::string_view name) {
  if (name == "ascii_grid") return RasterFormat::ascii_grid;
  if (name == "raw_f32") return RasterFormat::raw_f32;
  throw InvalidArgument("unknown raster format '" + std::string(name) + "'");
}

std::string_view to_string(RasterFormat format) {
  return format == RasterFormat::ascii_grid ? "ascii_grid" : "raw_f32";
}

void RasterTile::validate() const {
  if (nrows < 1 || ncols < 1) throw InvalidArgument("raster dimensions must be positive");
  if (!(cell_size > 0.0) || !std::isfinite(cell_size)) throw InvalidArgument("cell size must be > 0");
  if (values.size() != static_cast<std::size_t>(nrows) * static_cast<std::size_t>(ncols))
    throw InvalidArgument("raster payload size does not match dimensions");
}

RasterTile make_tile(int nrows, int ncols, double cell_size, double fill, double nodata) {
  RasterTile tile;
  tile.nrows = nrows;
  tile.ncols = ncols;
  tile.cell_size = cell_size;
  tile.nodata = nodata;
  tile.values.assign(static_cast<std::size_t>(std::max(nrows, 0)) * static_cast<std::size_t>(std::max(ncols, 0)), fill);
  tile.validate();
  return tile;
}

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

void check_finite(const RasterTile& tile, const std::filesystem::path& path) {
  for (double v : tile.values) {
    if (!tile.is_nodata(v) && !std::isfinite(v))
      throw FormatError(path.string() + ": non-finite sample that is not nodata");
  }
}

RasterTile load_ascii(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::istringstream in(text);
  RasterTile tile;
  bool have_rows = false, have_cols = false, have_cell = false;
  std::string key;
  std::streampos data_start = 0;
  while (true) {
    data_start = in.tellg();
    if (!(in >> key)) break;
    const std::string k = lower(key);
    if (!k.empty() && (std::isdigit(static_cast<unsigned char>(k[0])) || k[0] == '-' || k[0] == '+' || k[0] == '.'))
      break;
    double value = 0.0;
    if (!(in >> value)) throw FormatError(path.string() + ": header entry '" + key + "' has no numeric value");
    if (k == "ncols") {
      tile.ncols = static_cast<int>(value);
      have_cols = value == std::floor(value);
    } else if (k == "nrows") {
      tile.nrows = static_cast<int>(value);
      have_rows = value == std::floor(value);
    } else if (k == "cellsize") {
      tile.cell_size = value;
      have_cell = true;
    } else if (k == "nodata_value") {
      tile.nodata = value;
    } else if (k == "xllcorner" || k == "yllcorner" || k == "xllcenter" || k == "yllcenter") {
      // georeferencing is not used
    } else {
      throw FormatError(path.string() + ": unknown header key '" + key + "'");
    }
  }
  if (!have_rows || !have_cols || !have_cell || tile.nrows < 1 || tile.ncols < 1 || !(tile.cell_size > 0.0))
    throw FormatError(path.string() + ": header must define positive ncols, nrows and cellsize");

  in.clear();
  in.seekg(data_start);
  const std::size_t expected = static_cast<std::size_t>(tile.nrows) * static_cast<std::size_t>(tile.ncols);
  tile.values.reserve(expected);
  std::string token;
  while (in >> token) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc() || ptr != token.data() + token.size())
      throw FormatError(path.string() + ": bad sample '" + token + "'");
    tile.values.push_back(v);
  }
  if (tile.values.size() != expected) {
    throw DimensionMismatch(path.string() + ": expected " + std::to_string(expected) + " samples, found " +
                            std::to_string(tile.values.size()));
  }
  check_finite(tile, path);
  return tile;
}

std::filesystem::path sidecar_of(const std::filesystem::path& path) {
  std::filesystem::path side = path;
  side += ".json";
  return side;
}

RasterTile load_raw(const std::filesystem::path& path) {
  RasterTile tile;
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(sidecar_of(path)));
    tile.nrows = meta.at("nrows").get<int>();
    tile.ncols = meta.at("ncols").get<int>();
    tile.cell_size = meta.at("cell_size_m").get<double>();
    tile.nodata = meta.value("nodata", -9999.0);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(sidecar_of(path).string() + ": " + e.what());
  }
  if (tile.nrows < 1 || tile.ncols < 1 || !(tile.cell_size > 0.0))
    throw FormatError(sidecar_of(path).string() + ": dimensions and cell size must be positive");

  const std::string bytes = read_file(path);
  const std::size_t expected = static_cast<std::size_t>(tile.nrows) * static_cast<std::size_t>(tile.ncols);
  if (bytes.size() != expected * sizeof(float)) {
    throw DimensionMismatch(path.string() + ": expected " + std::to_string(expected) + " float32 samples, found " +
                            std::to_string(bytes.size() / sizeof(float)) +
                            (bytes.size() % sizeof(float) ? " (plus a partial sample)" : ""));
  }
  // Nodata sentinels are compared after the float round trip.
  const double nodata = static_cast<float>(tile.nodata);
  tile.values.resize(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    std::uint32_t raw = 0;
    std::memcpy(&raw, bytes.data() + i * sizeof(float), sizeof(float));
    if constexpr (std::endian::native == std::endian::big) raw = __builtin_bswap32(raw);
    const float v = std::bit_cast<float>(raw);
    tile.values[i] = static_cast<double>(v) == nodata ? tile.nodata : static_cast<double>(v);
  }
  check_finite(tile, path);
  return tile;
}

void append_number(std::string& out, double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}

}  // namespace

RasterTile load_raster(const std::filesystem::path& path, RasterFormat format) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  return format == RasterFormat::ascii_grid ? load_ascii(path) : load_raw(path);
}

void save_raster(const RasterTile& tile, const std::filesystem::path& path, RasterFormat format) {
  tile.validate();
  if (format == RasterFormat::ascii_grid) {
    std::string out;
    out.reserve(tile.values.size() * 12 + 128);
    out += "ncols " + std::to_string(tile.ncols) + "\n";
    out += "nrows " + std::to_string(tile.nrows) + "\n";
    out += "xllcorner 0\nyllcorner 0\ncellsize ";
    append_number(out, tile.cell_size);
    out += "\nNODATA_value ";
    append_number(out, tile.nodata);
    out += "\n";
    for (int r = 0; r < tile.nrows; ++r) {
      for (int c = 0; c < tile.ncols; ++c) {
        if (c > 0) out += ' ';
        append_number(out, tile.at(r, c));
      }
      out += '\n';
    }
    write_file_atomic(path, out);
    return;
  }
  std::string bytes(tile.values.size() * sizeof(float), '\0');
  for (std::size_t i = 0; i < tile.values.size(); ++i) {
    auto raw = std::bit_cast<std::uint32_t>(static_cast<float>(tile.values[i]));
    if constexpr (std::endian::native == std::endian::big) raw = __builtin_bswap32(raw);
    std::memcpy(bytes.data() + i * sizeof(float), &raw, sizeof(float));
  }
  const nlohmann::json meta = {{"nrows", tile.nrows},
                               {"ncols", tile.ncols},
                               {"cell_size_m", tile.cell_size},
                               {"nodata", tile.nodata}};
  write_file_atomic(path, bytes);
  write_file_atomic(sidecar_of(path), meta.dump(2) + "\n");
}

RasterTile block_downsample(const RasterTile& tile, int factor) {
  if (factor < 1) throw InvalidArgument("downsample factor must be >= 1");
  tile.validate();
  if (tile.nrows < factor || tile.ncols < factor)
    throw InvalidArgument("tile is smaller than the downsample factor");
  RasterTile out;
  out.nrows = tile.nrows / factor;
  out.ncols = tile.ncols / factor;
  out.cell_size = tile.cell_size * factor;
  out.nodata = tile.nodata;
  out.values.resize(static_cast<std::size_t>(out.nrows) * static_cast<std::size_t>(out.ncols));
  const int block = factor * factor;
  for (int r = 0; r < out.nrows; ++r) {
    for (int c = 0; c < out.ncols; ++c) {
      double sum = 0.0;
      int valid = 0;
      for (int i = 0; i < factor; ++i) {
        for (int j = 0; j < factor; ++j) {
          const double v = tile.at(r * factor + i, c * factor + j);
          if (tile.is_nodata(v)) continue;
          sum += v;
          ++valid;
        }
      }
      out.at(r, c) = 2 * (block - valid) > block ? out.nodata : sum / valid;
    }
  }
  return out;
}

bool patch_is_reliable(std::span<const double> qa_window) {
  if (qa_window.empty()) return false;
  double lo = qa_window.front();
  double hi = qa_window.front();
  for (double v : qa_window) {
    if (!(v > 0.0)) return false;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return hi <= 2.0 * lo;
}

std::vector<Patch> extract_patches(const RasterTile& dem, const RasterTile& qa, int half_size,
                                   int max_count, ExtractionStats* stats) {
  if (dem.nrows != qa.nrows || dem.ncols != qa.ncols)
    throw InvalidArgument("DEM and QA rasters differ in size");
  if (half_size < 2) throw InvalidArgument("patch half size must be >= 2");
  if (max_count < 0) throw InvalidArgument("max_count must be >= 0");
  const int n = 2 * half_size + 1;
  const int grid_rows = dem.nrows / n;
  const int grid_cols = dem.ncols / n;
  int stride = 1;
  while (max_count > 0 && static_cast<long long>((grid_rows + stride - 1) / stride) * ((grid_cols + stride - 1) / stride) > max_count)
    ++stride;

  ExtractionStats local;
  std::vector<Patch> patches;
  if (max_count == 0) {
    if (stats) *stats = local;
    return patches;
  }
  std::vector<double> qa_window(static_cast<std::size_t>(n * n));
  const auto coords = covmodel::square_patch_coords(half_size);
  for (int gr = 0; gr < grid_rows; gr += stride) {
    for (int gc = 0; gc < grid_cols; gc += stride) {
      if (static_cast<int>(patches.size()) >= max_count) break;
      ++local.windows;
      const int r0 = gr * n;
      const int c0 = gc * n;
      bool missing = false;
      double z_sum = 0.0;
      double stk_sum = 0.0;
      for (int i = 0; i < n && !missing; ++i) {
        for (int j = 0; j < n; ++j) {
          const double z = dem.at(r0 + i, c0 + j);
          const double q = qa.at(r0 + i, c0 + j);
          if (dem.is_nodata(z) || qa.is_nodata(q)) {
            missing = true;
            break;
          }
          z_sum += z;
          stk_sum += q;
          qa_window[static_cast<std::size_t>(i * n + j)] = q;
        }
      }
      if (missing) {
        ++local.nodata;
        continue;
      }
      if (!patch_is_reliable(qa_window)) {
        ++local.unreliable;
        continue;
      }
      Patch p;
      p.half_size = half_size;
      p.tile_position = {r0 + half_size, c0 + half_size};
      p.predictor = {stk_sum / (n * n), z_sum / (n * n)};
      const double centre = dem.at(r0 + half_size, c0 + half_size);
      p.increments.resize(static_cast<Eigen::Index>(coords.size()));
      for (std::size_t k = 0; k < coords.size(); ++k) {
        // t runs along columns, s along rows.
        p.increments[static_cast<Eigen::Index>(k)] =
            dem.at(p.tile_position.row + coords[k].s, p.tile_position.col + coords[k].t) - centre;
      }
      patches.push_back(std::move(p));
    }
  }
  if (stats) *stats = local;
  return patches;
}

}  // namespace demblind::raster
