#include "demblind/config.hpp"

#include <charconv>
#include <sstream>

#include "demblind/error.hpp"
#include "demblind/fileio.hpp"

namespace demblind::config {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == ',')) ++i;
    const std::size_t start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t' && s[i] != ',') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw InvalidArgument("config key '" + std::string(key) + "': bad number '" + std::string(text) + "'");
  }
  return value;
}

std::vector<double> parse_numbers(std::string_view key, std::string_view text) {
  std::vector<double> out;
  for (auto tok : split_ws(text)) out.push_back(parse_number<double>(key, tok));
  return out;
}

std::filesystem::path resolve(const std::filesystem::path& base, std::string_view p) {
  std::filesystem::path path{std::string(p)};
  return path.is_absolute() ? path : base / path;
}

int parse_m_choice(std::string_view text) {
  if (text == "1") return 1;
  if (text == "2") return 2;
  if (text == "both" || text == "0") return 0;
  throw InvalidArgument("m_exponent must be 1, 2 or both");
}

simulate::TruthModel parse_truth(std::string_view key, std::string_view kind, std::string_view coeffs) {
  simulate::TruthModel m;
  m.kind = regression::parse_model_kind(kind);
  const auto values = parse_numbers(key, coeffs);
  if (static_cast<int>(values.size()) != regression::regressor_count(m.kind)) {
    throw InvalidArgument("config key '" + std::string(key) + "': expected " +
                          std::to_string(regression::regressor_count(m.kind)) + " coefficients");
  }
  m.coeffs = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
  return m;
}

}  // namespace

KeyValues parse_key_values(std::string_view text) {
  KeyValues out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto line = trim(text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos));
    ++line_no;
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw FormatError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw FormatError("config line " + std::to_string(line_no) + ": empty key");
    out.emplace_back(std::string(key), std::string(trim(line.substr(eq + 1))));
  }
  return out;
}

std::vector<TilePaths> parse_manifest(std::string_view text, const std::filesystem::path& base_dir) {
  std::vector<TilePaths> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto parts = split_ws(t);
    if (parts.size() != 2) throw FormatError("manifest line must hold 'dem_path qa_path'");
    out.push_back({resolve(base_dir, parts[0]), resolve(base_dir, parts[1])});
  }
  return out;
}

RunConfig parse_run_config(const KeyValues& entries, const std::filesystem::path& base_dir) {
  RunConfig rc;
  auto& pc = rc.pipeline;
  auto& sc = rc.simulation;
  std::string variance_kind(regression::to_string(sc.variance.kind));
  std::string corr_kind(regression::to_string(sc.corr_width.kind));
  std::optional<std::string> variance_coeffs, corr_coeffs;

  for (const auto& [key, value] : entries) {
    const std::string_view k = key;
    if (k == "seed") {
      rc.seed = parse_number<std::uint64_t>(k, value);
    } else if (k == "out_dir") {
      rc.out_dir = resolve(base_dir, value);
    } else if (k == "downsample") {
      rc.downsample = parse_number<int>(k, value);
    } else if (k == "format") {
      rc.format = raster::parse_format(value);
    } else if (k == "tile") {
      const auto parts = split_ws(value);
      if (parts.size() != 2) throw InvalidArgument("tile expects 'dem_path qa_path'");
      rc.tiles.push_back({resolve(base_dir, parts[0]), resolve(base_dir, parts[1])});
    } else if (k == "manifest") {
      const auto path = resolve(base_dir, value);
      auto listed = parse_manifest(read_file(path), path.parent_path());
      rc.tiles.insert(rc.tiles.end(), listed.begin(), listed.end());
    } else if (k == "estimates") {
      rc.estimates = resolve(base_dir, value);
    } else if (k == "predict") {
      const auto v = parse_numbers(k, value);
      if (v.size() != 2) throw InvalidArgument("predict expects 'n_stk z'");
      rc.predictions.push_back({v[0], v[1]});
    } else if (k == "patch_half_size") {
      pc.patch_half_size = parse_number<int>(k, value);
      sc.half_size = pc.patch_half_size;
    } else if (k == "r_ha_threshold") {
      pc.r_ha_threshold = parse_number<double>(k, value);
    } else if (k == "group_size_cap") {
      pc.group_size_cap = parse_number<int>(k, value);
    } else if (k == "sn_ratio_ti") {
      pc.sn_ratio_ti = parse_number<double>(k, value);
    } else if (k == "weight_nstk") {
      pc.predictor_weights[0] = parse_number<double>(k, value);
    } else if (k == "weight_z") {
      pc.predictor_weights[1] = parse_number<double>(k, value);
    } else if (k == "max_iterations") {
      pc.max_iterations = parse_number<int>(k, value);
    } else if (k == "shepard_power") {
      pc.shepard_power = parse_number<double>(k, value);
    } else if (k == "noise_shape") {
      pc.shape = covmodel::parse_noise_shape(value);
      sc.shape = pc.shape;
    } else if (k == "m_exponent") {
      pc.m_choice = parse_m_choice(value);
    } else if (k == "t_min") {
      pc.t_min = parse_number<double>(k, value);
    } else if (k == "convergence_tol") {
      pc.convergence_tol = parse_number<double>(k, value);
    } else if (k == "max_patches_per_tile") {
      pc.max_patches_per_tile = parse_number<int>(k, value);
    } else if (k == "sim_tiles") {
      sc.tiles = parse_number<int>(k, value);
    } else if (k == "sim_patches_per_side") {
      sc.patches_per_side = parse_number<int>(k, value);
    } else if (k == "sim_region_patches") {
      sc.region_patches = parse_number<int>(k, value);
    } else if (k == "sim_cell_size") {
      sc.cell_size = parse_number<double>(k, value);
    } else if (k == "nstk_min") {
      sc.nstk_min = parse_number<int>(k, value);
    } else if (k == "nstk_max") {
      sc.nstk_max = parse_number<int>(k, value);
    } else if (k == "z_min") {
      sc.z_min = parse_number<double>(k, value);
    } else if (k == "z_max") {
      sc.z_max = parse_number<double>(k, value);
    } else if (k == "z_jitter") {
      sc.z_jitter = parse_number<double>(k, value);
    } else if (k == "snr_log10_min") {
      sc.snr_log10_min = parse_number<double>(k, value);
    } else if (k == "snr_log10_max") {
      sc.snr_log10_max = parse_number<double>(k, value);
    } else if (k == "pure_noise_fraction") {
      sc.pure_noise_fraction = parse_number<double>(k, value);
    } else if (k == "hurst_min") {
      sc.hurst_min = parse_number<double>(k, value);
    } else if (k == "hurst_max") {
      sc.hurst_max = parse_number<double>(k, value);
    } else if (k == "truth_variance_model") {
      variance_kind = value;
    } else if (k == "truth_variance_coeffs") {
      variance_coeffs = value;
    } else if (k == "truth_corr_model") {
      corr_kind = value;
    } else if (k == "truth_corr_coeffs") {
      corr_coeffs = value;
    } else {
      throw InvalidArgument("unknown config key '" + key + "'");
    }
  }

  if (variance_coeffs) {
    sc.variance = parse_truth("truth_variance_coeffs", variance_kind, *variance_coeffs);
  } else if (variance_kind != regression::to_string(sc.variance.kind)) {
    throw InvalidArgument("truth_variance_model needs truth_variance_coeffs");
  }
  if (corr_coeffs) {
    sc.corr_width = parse_truth("truth_corr_coeffs", corr_kind, *corr_coeffs);
  } else if (corr_kind != regression::to_string(sc.corr_width.kind)) {
    throw InvalidArgument("truth_corr_model needs truth_corr_coeffs");
  }
  if (rc.downsample < 1) throw InvalidArgument("downsample must be >= 1");
  pc.validate();
  sc.validate();
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  return parse_run_config(parse_key_values(text), path.parent_path());
}

}  // namespace demblind::config
