#include "demblind/simulate.hpp"

#include <cmath>
#include <random>

#include "demblind/error.hpp"

namespace demblind::simulate {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Eigen::MatrixXd window_noise_cov(int half_size, double sigma_e2, double sigma_corr2,
                                 covmodel::NoiseShape shape) {
  const int n = 2 * half_size + 1;
  const int m = n * n;
  Eigen::MatrixXd cov(m, m);
  for (int a = 0; a < m; ++a) {
    for (int b = 0; b <= a; ++b) {
      const int dr = a / n - b / n;
      const int dc = a % n - b % n;
      const double v = sigma_e2 * covmodel::noise_correlation_sq(dr * dr + dc * dc, sigma_corr2, shape);
      cov(a, b) = cov(b, a) = v;
    }
  }
  return cov;
}

Eigen::VectorXd standard_normal(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

}  // namespace

TruthModel reference_variance_model() {
  TruthModel m;
  m.kind = regression::ModelKind::full_quadratic;
  m.coeffs = Eigen::Vector4d(1.0293, 25.6667, 4.8991e-7, 6.1069e-6);
  return m;
}

TruthModel reference_corr_model() {
  TruthModel m;
  m.kind = regression::ModelKind::z_quadratic;
  m.coeffs = Eigen::Vector2d(0.1937, 1.7786e-8);
  return m;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(splitmix64(seed) ^ a) ^ (b * 0xd1b54a32d192ed03ULL));
}

void SimulationConfig::validate() const {
  if (tiles < 1) throw InvalidArgument("tiles must be >= 1");
  if (patches_per_side < 1) throw InvalidArgument("patches_per_side must be >= 1");
  if (region_patches < 1) throw InvalidArgument("region_patches must be >= 1");
  if (half_size < 2) throw InvalidArgument("half_size must be >= 2");
  if (!(cell_size > 0.0)) throw InvalidArgument("cell_size must be > 0");
  if (nstk_min < 1 || nstk_max < nstk_min) throw InvalidArgument("need 1 <= nstk_min <= nstk_max");
  if (!(z_max >= z_min)) throw InvalidArgument("need z_min <= z_max");
  if (!(z_jitter >= 0.0)) throw InvalidArgument("z_jitter must be >= 0");
  if (!(snr_log10_max >= snr_log10_min)) throw InvalidArgument("need snr_log10_min <= snr_log10_max");
  if (!(pure_noise_fraction >= 0.0 && pure_noise_fraction <= 1.0))
    throw InvalidArgument("pure_noise_fraction must lie in [0,1]");
  if (!(hurst_min > 0.0 && hurst_max < 1.0 && hurst_min <= hurst_max))
    throw InvalidArgument("need 0 < hurst_min <= hurst_max < 1");
  if (variance.coeffs.size() != regression::regressor_count(variance.kind) ||
      corr_width.coeffs.size() != regression::regressor_count(corr_width.kind))
    throw InvalidArgument("truth coefficient count does not match its model");
}

Simulation simulate(const SimulationConfig& config) {
  config.validate();
  const int n = 2 * config.half_size + 1;
  const int size = config.tile_size();
  const auto geometry = covmodel::PatchGeometry::square(config.half_size);
  const auto& coords = geometry.coords();

  Simulation out;
  for (int t = 0; t < config.tiles; ++t) {
    std::mt19937_64 tile_rng(derive_seed(config.seed, static_cast<std::uint64_t>(t), 0));
    std::uniform_real_distribution<double> hurst_dist(config.hurst_min, config.hurst_max);
    SimulatedTile tile;
    tile.hurst = hurst_dist(tile_rng);
    tile.dem = raster::make_tile(size, size, config.cell_size, 0.0);
    tile.qa = raster::make_tile(size, size, config.cell_size, 0.0);

    const int regions_per_side = (config.patches_per_side + config.region_patches - 1) / config.region_patches;
    std::vector<double> region_nstk, region_z;
    std::uniform_int_distribution<int> nstk_dist(config.nstk_min, config.nstk_max);
    std::uniform_real_distribution<double> z_dist(config.z_min, config.z_max);
    for (int r = 0; r < regions_per_side * regions_per_side; ++r) {
      region_nstk.push_back(nstk_dist(tile_rng));
      region_z.push_back(z_dist(tile_rng));
    }

    const Eigen::MatrixXd fbm_factor =
        covmodel::sampling_factor(covmodel::fbm_unit_matrix(geometry, tile.hurst));

    for (int pr = 0; pr < config.patches_per_side; ++pr) {
      for (int pc = 0; pc < config.patches_per_side; ++pc) {
        const int window = pr * config.patches_per_side + pc;
        std::mt19937_64 rng(
            derive_seed(config.seed, static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(window) + 1));
        const int region = (pr / config.region_patches) * regions_per_side + pc / config.region_patches;

        WindowTruth truth;
        truth.tile = t;
        truth.centre = {pr * n + config.half_size, pc * n + config.half_size};
        truth.hurst = tile.hurst;
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        truth.predictor.n_stk = region_nstk[static_cast<std::size_t>(region)];
        truth.predictor.z = region_z[static_cast<std::size_t>(region)] +
                            config.z_jitter * (2.0 * unit(rng) - 1.0);
        truth.sigma_e2 = config.variance(truth.predictor);
        truth.sigma_corr2 = std::max(config.corr_width(truth.predictor), 1e-4);
        const bool pure = unit(rng) < config.pure_noise_fraction;
        const double log_snr =
            config.snr_log10_min + (config.snr_log10_max - config.snr_log10_min) * unit(rng);
        truth.sigma_x2 = pure ? 0.0 : truth.sigma_e2 * std::pow(10.0, log_snr);

        const Eigen::VectorXd terrain =
            std::sqrt(truth.sigma_x2) * (fbm_factor * standard_normal(geometry.size(), rng));
        const Eigen::VectorXd noise =
            covmodel::sampling_factor(window_noise_cov(config.half_size, truth.sigma_e2,
                                                       truth.sigma_corr2, config.shape)) *
            standard_normal(n * n, rng);

        const int row0 = pr * n;
        const int col0 = pc * n;
        const int c = config.half_size;
        auto noise_at = [&](int s, int tt) { return noise[(s + c) * n + (tt + c)]; };
        tile.dem.at(truth.centre.row, truth.centre.col) = truth.predictor.z + noise_at(0, 0);
        for (std::size_t k = 0; k < coords.size(); ++k) {
          const auto& o = coords[k];
          tile.dem.at(truth.centre.row + o.s, truth.centre.col + o.t) =
              truth.predictor.z + terrain[static_cast<Eigen::Index>(k)] + noise_at(o.s, o.t);
        }
        for (int r = row0; r < row0 + n; ++r) {
          for (int cc = col0; cc < col0 + n; ++cc) tile.qa.at(r, cc) = truth.predictor.n_stk;
        }
        out.windows.push_back(truth);
      }
    }
    out.tiles.push_back(std::move(tile));
  }
  return out;
}

}  // namespace demblind::simulate
