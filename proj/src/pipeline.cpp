#include "demblind/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "demblind/error.hpp"

namespace demblind::pipeline {

using covmodel::FbmParams;
using covmodel::PatchGeometry;
using covmodel::Theta;
using regression::GroupEstimate;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// Keeps the noise covariance factorizable on flat patches.
constexpr double kSigmaE2Floor = 1e-6;

double squared_distance(const TilePosition& a, const TilePosition& b) {
  const double dr = a.row - b.row;
  const double dc = a.col - b.col;
  return dr * dr + dc * dc;
}

// Interpolation at ti[skip] from all other estimates; skip < 0 uses all.
double shepard(std::span<const TiEstimate> ti, const TilePosition& query, double power,
               std::ptrdiff_t skip) {
  double sw = 0.0, swh = 0.0;
  for (std::size_t j = 0; j < ti.size(); ++j) {
    if (static_cast<std::ptrdiff_t>(j) == skip) continue;
    const double d2 = squared_distance(ti[j].position, query);
    if (d2 == 0.0) return ti[j].hurst;
    const double w = std::pow(d2, -0.5 * power);
    sw += w;
    swh += w * ti[j].hurst;
  }
  return sw > 0.0 ? swh / sw : kFallbackHurst;
}

struct PassOutput {
  std::vector<GroupEstimate> estimates;
  std::vector<NIGroup> groups;
  PassDiagnostics diag;
  std::optional<regression::ModelFit> model;
};

struct State {
  std::span<const raster::Patch> patches;
  const PatchGeometry* geometry = nullptr;
  const PipelineConfig* config = nullptr;
  std::vector<double> sigma_e2;
  std::vector<double> sigma_corr2;
  std::vector<FbmParams> texture;
  std::vector<bool> has_texture;
  std::vector<likelihood::HurstPrior> prior;

  double value(Target target, std::size_t i) const {
    return target == Target::sigma_e2 ? sigma_e2[i] : sigma_corr2[i];
  }
  double other(Target target, std::size_t i) const {
    return target == Target::sigma_e2 ? sigma_corr2[i] : sigma_e2[i];
  }
};

Theta theta_of(const State& s, std::size_t i) {
  Theta theta;
  theta.fbm = {s.texture[i].sigma_x2, s.prior[i].mean};
  theta.noise = {s.sigma_e2[i], s.sigma_corr2[i], s.config->shape};
  return theta;
}

PassOutput run_pass(const State& s, Target target) {
  const auto n = s.patches.size();
  const PipelineConfig& cfg = *s.config;
  std::vector<double> r_ha(n), value(n);
  std::vector<PredictorVector> predictors(n);
  for (std::size_t i = 0; i < n; ++i) {
    value[i] = s.value(target, i);
    predictors[i] = s.patches[i].predictor;
  }

#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    const auto u = static_cast<std::size_t>(i);
    // A window with no elevation change carries no error signal for either pass.
    const auto& z = s.patches[u].increments;
    const bool flat = z.size() == 0 || z.cwiseAbs().maxCoeff() == 0.0;
    r_ha[u] = flat ? kInf : homogeneity_index(*s.geometry, theta_of(s, u), target, s.prior[u].sd);
  }

  PassOutput out;
  GroupingStats stats;
  out.groups = group_patches(predictors, r_ha, value, cfg, &stats);
  out.diag.candidates = stats.candidates;
  out.diag.discarded_cap = stats.discarded_cap;
  out.diag.leftover = stats.leftover;

  std::vector<std::optional<GroupEstimate>> fitted(out.groups.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t g = 0; g < static_cast<std::ptrdiff_t>(out.groups.size()); ++g) {
    const NIGroup& group = out.groups[static_cast<std::size_t>(g)];
    std::vector<likelihood::GroupMember> members;
    double start = 0.0;
    for (int id : group.patch_ids) {
      const auto u = static_cast<std::size_t>(id);
      members.push_back({&s.patches[u].increments, s.prior[u], s.other(target, u), s.texture[u]});
      start += value[u];
    }
    start /= static_cast<double>(members.size());
    try {
      const auto fit =
          likelihood::estimate_group(members, *s.geometry, target, cfg.shape, start);
      if (std::isfinite(fit.crlb_sd) && fit.crlb_sd > 0.0 && std::isfinite(fit.value)) {
        GroupEstimate e;
        e.param_kind = target;
        e.value = fit.value;
        e.crlb_sd = fit.crlb_sd;
        e.mean_predictor = group.mean_predictor;
        e.n_patches = static_cast<int>(members.size());
        fitted[static_cast<std::size_t>(g)] = e;
      }
    } catch (const Error&) {
    }
  }
  for (std::size_t g = 0; g < fitted.size(); ++g) {
    if (fitted[g]) {
      out.estimates.push_back(*fitted[g]);
    } else {
      ++out.diag.failed_fits;
    }
  }
  out.diag.groups = static_cast<int>(out.estimates.size());

  if (!out.estimates.empty()) {
    try {
      const auto candidates = regression::candidate_models(cfg.m_choice);
      auto selection = regression::select_model(out.estimates, candidates, cfg.t_min);
      out.model = std::move(selection.selected);
      out.diag.model = out.model->model;
      out.diag.coeffs.assign(out.model->coeffs.data(),
                             out.model->coeffs.data() + out.model->coeffs.size());
    } catch (const ModelInestimable&) {
    }
  }
  return out;
}

bool models_agree(const std::optional<regression::ModelFit>& a,
                  const std::optional<regression::ModelFit>& b, double tol) {
  if (!a && !b) return true;
  if (!a || !b || a->model != b->model) return false;
  for (Eigen::Index j = 0; j < a->coeffs.size(); ++j) {
    const double ref = std::max(std::abs(b->coeffs[j]), b->coeff_sds[j]);
    if (std::abs(a->coeffs[j] - b->coeffs[j]) > tol * ref) return false;
  }
  return true;
}

void stage_texture(State& s) {
  const auto n = s.patches.size();
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    const auto u = static_cast<std::size_t>(i);
    covmodel::NoiseParams noise{s.sigma_e2[u], s.sigma_corr2[u], s.config->shape};
    std::optional<FbmParams> start;
    if (s.has_texture[u]) start = s.texture[u];
    try {
      s.texture[u] = likelihood::estimate_texture(s.patches[u].increments, *s.geometry, noise, start)
                         .theta.fbm;
      s.has_texture[u] = true;
    } catch (const Error&) {
      if (!s.has_texture[u]) s.texture[u] = {0.0, kFallbackHurst};
    }
  }
}

// Per-tile Hurst priors. TI patches are interpolated from the other TI
// patches of their tile so that no patch is its own prior.
void stage_hurst(State& s, std::span<const int> tile_of, IterationDiagnostics& diag) {
  const auto n = s.patches.size();
  std::map<int, std::vector<std::size_t>> by_tile;
  for (std::size_t i = 0; i < n; ++i) by_tile[tile_of[i]].push_back(i);

  diag.ti_patches = 0;
  diag.tiles_without_ti = 0;
  for (const auto& [tile, ids] : by_tile) {
    std::vector<TiEstimate> ti;
    std::vector<std::ptrdiff_t> ti_index(n, -1);
    for (std::size_t i : ids) {
      const double e2 = s.sigma_e2[i];
      const double x2 = s.texture[i].sigma_x2;
      const bool is_ti = e2 > 0.0 ? x2 / e2 > s.config->sn_ratio_ti : x2 > 0.0;
      if (is_ti) {
        ti_index[i] = static_cast<std::ptrdiff_t>(ti.size());
        ti.push_back({s.patches[i].tile_position, s.texture[i].hurst});
      }
    }
    diag.ti_patches += static_cast<int>(ti.size());
    if (ti.empty()) ++diag.tiles_without_ti;
    const double sd = ti.size() < 3 ? kFallbackHurstSd
                                    : std::max(hurst_interp_error_sd(ti, s.config->shepard_power),
                                               kHurstSdFloor);
    for (std::size_t i : ids) {
      const auto skip = ti_index[i];
      const bool alone = ti.empty() || (skip >= 0 && ti.size() == 1);
      double mean = alone ? kFallbackHurst
                          : shepard(ti, s.patches[i].tile_position, s.config->shepard_power, skip);
      mean = std::clamp(mean, likelihood::kHurstMin, likelihood::kHurstMax);
      s.prior[i] = {mean, ti.empty() ? kFallbackHurstSd : sd};
    }
  }
}

void update_from_model(State& s, Target target, const std::optional<regression::ModelFit>& model) {
  if (!model) return;
  for (std::size_t i = 0; i < s.patches.size(); ++i) {
    const double v = regression::predict(*model, s.patches[i].predictor);
    if (target == Target::sigma_e2) {
      s.sigma_e2[i] = std::max(v, kSigmaE2Floor);
    } else {
      s.sigma_corr2[i] = std::clamp(v, likelihood::kSigmaCorr2Floor, likelihood::kSigmaCorr2Ceiling);
    }
  }
}

}  // namespace

void PipelineConfig::validate() const {
  if (patch_half_size < 2) throw InvalidArgument("patch_half_size must be >= 2");
  if (!(r_ha_threshold > 0.0)) throw InvalidArgument("r_ha_threshold must be > 0");
  if (group_size_cap < 1) throw InvalidArgument("group_size_cap must be >= 1");
  if (!(sn_ratio_ti > 0.0)) throw InvalidArgument("sn_ratio_ti must be > 0");
  if (!(predictor_weights[0] > 0.0) || !(predictor_weights[1] > 0.0))
    throw InvalidArgument("predictor weights must be > 0");
  if (max_iterations < 1) throw InvalidArgument("max_iterations must be >= 1");
  if (!(shepard_power > 0.0)) throw InvalidArgument("shepard_power must be > 0");
  if (m_choice < 0 || m_choice > 2) throw InvalidArgument("m_choice must be 0, 1 or 2");
  if (!(t_min >= 0.0)) throw InvalidArgument("t_min must be >= 0");
  if (!(convergence_tol > 0.0)) throw InvalidArgument("convergence_tol must be > 0");
  if (max_patches_per_tile < 1) throw InvalidArgument("max_patches_per_tile must be >= 1");
}

double homogeneity_index(const PatchGeometry& geometry, const Theta& theta, Target target,
                         double hurst_prior_sd) {
  const double s = theta.get(likelihood::param_of(target));
  if (!(s > 0.0)) return kInf;
  try {
    return likelihood::crlb(geometry, theta, target, hurst_prior_sd) / s;
  } catch (const UnboundedCrlb&) {
    return kInf;
  } catch (const DegenerateModel&) {
    return kInf;
  }
}

double interpolate_hurst(std::span<const TiEstimate> ti, const TilePosition& query, double power) {
  if (ti.empty()) return kFallbackHurst;
  return shepard(ti, query, power, -1);
}

double hurst_interp_error_sd(std::span<const TiEstimate> ti, double power) {
  if (ti.size() < 3) return kFallbackHurstSd;
  double sum_sq = 0.0;
  for (std::size_t k = 0; k < ti.size(); ++k) {
    const double d = shepard(ti, ti[k].position, power, static_cast<std::ptrdiff_t>(k)) - ti[k].hurst;
    sum_sq += d * d;
  }
  return std::sqrt(sum_sq / static_cast<double>(ti.size()));
}

double predictor_distance(const PredictorVector& a, const PredictorVector& b,
                          const std::array<double, 2>& weights) {
  const double d1 = weights[0] * (a.n_stk - b.n_stk);
  const double d2 = weights[1] * (a.z - b.z);
  return std::sqrt(d1 * d1 + d2 * d2);
}

std::vector<NIGroup> group_patches(std::span<const PredictorVector> predictors,
                                   std::span<const double> r_ha, std::span<const double> value,
                                   const PipelineConfig& config, GroupingStats* stats) {
  if (predictors.size() != r_ha.size() || predictors.size() != value.size())
    throw InvalidArgument("predictor, r_ha and value lengths differ");
  GroupingStats local;
  std::vector<NIGroup> groups;
  if (predictors.empty()) {
    if (stats) *stats = local;
    return groups;
  }

  double min_n = kInf, min_z = kInf;
  for (const auto& p : predictors) {
    min_n = std::min(min_n, p.n_stk);
    min_z = std::min(min_z, p.z);
  }
  const auto& w = config.predictor_weights;
  std::map<std::array<long long, 2>, std::vector<int>> cells;
  for (std::size_t i = 0; i < predictors.size(); ++i) {
    if (!std::isfinite(r_ha[i]) || !(value[i] > 0.0)) continue;
    ++local.candidates;
    const std::array<long long, 2> key{
        static_cast<long long>(std::floor(w[0] * (predictors[i].n_stk - min_n))),
        static_cast<long long>(std::floor(w[1] * (predictors[i].z - min_z)))};
    cells[key].push_back(static_cast<int>(i));
  }
  local.cells = static_cast<int>(cells.size());

  for (auto& [key, ids] : cells) {
    std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
      return r_ha[static_cast<std::size_t>(a)] < r_ha[static_cast<std::size_t>(b)];
    });
    std::vector<int> current;
    std::vector<double> sds;
    double value_sum = 0.0;
    std::size_t next = 0;
    for (; next < ids.size(); ++next) {
      const auto u = static_cast<std::size_t>(ids[next]);
      current.push_back(ids[next]);
      sds.push_back(r_ha[u] * value[u]);
      value_sum += value[u];
      const double mean_value = value_sum / static_cast<double>(current.size());
      const double combined = likelihood::combine_crlb(sds) / mean_value;
      if (combined <= config.r_ha_threshold) {
        NIGroup g;
        g.patch_ids = current;
        g.cell = key;
        g.r_ha_combined = combined;
        for (int id : current) {
          g.mean_predictor.n_stk += predictors[static_cast<std::size_t>(id)].n_stk;
          g.mean_predictor.z += predictors[static_cast<std::size_t>(id)].z;
        }
        g.mean_predictor.n_stk /= static_cast<double>(current.size());
        g.mean_predictor.z /= static_cast<double>(current.size());
        local.grouped += static_cast<int>(current.size());
        groups.push_back(std::move(g));
        current.clear();
        sds.clear();
        value_sum = 0.0;
      } else if (static_cast<int>(current.size()) >= config.group_size_cap) {
        // Later patches are less homogeneous still, so the cell is exhausted.
        ++local.discarded_cap;
        ++next;
        break;
      }
    }
    local.leftover += static_cast<int>(ids.size() - next);
    if (next == ids.size() && !current.empty() &&
        static_cast<int>(current.size()) < config.group_size_cap) {
      local.leftover += static_cast<int>(current.size());
    }
  }
  if (stats) *stats = local;
  return groups;
}

PipelineResult run_pipeline_on_patches(std::span<const raster::Patch> patches,
                                       std::span<const int> tile_of, const PipelineConfig& config) {
  config.validate();
  if (patches.size() != tile_of.size()) throw InvalidArgument("tile_of length differs from patches");
  const PatchGeometry geometry = PatchGeometry::square(config.patch_half_size);
  for (const auto& p : patches) {
    if (p.half_size != config.patch_half_size || p.increments.size() != geometry.size())
      throw InvalidArgument("patch size does not match patch_half_size");
  }

  PipelineResult result;
  Diagnostics& diag = result.diagnostics;
  const auto n = patches.size();
  diag.reliable_patches = static_cast<int>(n);
  if (n == 0) {
    diag.status = "no_reliable_patches";
    return result;
  }
  diag.predictor_min = diag.predictor_max = patches[0].predictor;
  for (const auto& p : patches) {
    diag.predictor_min.n_stk = std::min(diag.predictor_min.n_stk, p.predictor.n_stk);
    diag.predictor_min.z = std::min(diag.predictor_min.z, p.predictor.z);
    diag.predictor_max.n_stk = std::max(diag.predictor_max.n_stk, p.predictor.n_stk);
    diag.predictor_max.z = std::max(diag.predictor_max.z, p.predictor.z);
  }

  State s;
  s.patches = patches;
  s.geometry = &geometry;
  s.config = &config;
  s.sigma_e2.resize(n);
  s.sigma_corr2.assign(n, 0.25);
  s.texture.assign(n, FbmParams{0.0, kFallbackHurst});
  s.has_texture.assign(n, false);
  s.prior.assign(n, likelihood::HurstPrior{kFallbackHurst, kFallbackHurstSd});
  const auto coords = geometry.coords();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    const auto u = static_cast<std::size_t>(i);
    s.sigma_e2[u] =
        std::max(likelihood::laplacian_mad_sigma_e2(patches[u].increments, coords), kSigmaE2Floor);
  }

  std::optional<regression::ModelFit> prev_variance, prev_corr;
  PassOutput variance, corr;
  for (int iter = 1; iter <= config.max_iterations; ++iter) {
    IterationDiagnostics it;
    it.iteration = iter;
    stage_texture(s);
    stage_hurst(s, tile_of, it);

    variance = run_pass(s, Target::sigma_e2);
    update_from_model(s, Target::sigma_e2, variance.model);
    corr = run_pass(s, Target::sigma_corr2);
    update_from_model(s, Target::sigma_corr2, corr.model);

    it.variance = variance.diag;
    it.corr_width = corr.diag;
    diag.history.push_back(it);
    diag.iterations = iter;
    diag.ti_patches = it.ti_patches;

    const bool stable = iter > 1 && models_agree(variance.model, prev_variance, config.convergence_tol) &&
                        models_agree(corr.model, prev_corr, config.convergence_tol);
    const bool nothing = variance.estimates.empty() && corr.estimates.empty();
    prev_variance = variance.model;
    prev_corr = corr.model;
    if (stable || nothing) {
      diag.converged = true;
      break;
    }
  }

  for (const auto& g : variance.groups) diag.ni_patches_variance += static_cast<int>(g.patch_ids.size());
  for (const auto& g : corr.groups) diag.ni_patches_corr_width += static_cast<int>(g.patch_ids.size());
  result.variance = std::move(variance.estimates);
  result.corr_width = std::move(corr.estimates);
  diag.groups_variance = static_cast<int>(result.variance.size());
  diag.groups_corr_width = static_cast<int>(result.corr_width.size());
  if (result.variance.empty() && result.corr_width.empty()) diag.status = "no_ni_groups";
  return result;
}

PipelineResult run_pipeline(std::span<const TileInput> tiles, const PipelineConfig& config) {
  config.validate();
  std::vector<raster::Patch> patches;
  std::vector<int> tile_of;
  raster::ExtractionStats total;
  for (std::size_t t = 0; t < tiles.size(); ++t) {
    raster::ExtractionStats st;
    auto extracted = raster::extract_patches(tiles[t].dem, tiles[t].qa, config.patch_half_size,
                                             config.max_patches_per_tile, &st);
    total.windows += st.windows;
    total.nodata += st.nodata;
    total.unreliable += st.unreliable;
    for (auto& p : extracted) {
      patches.push_back(std::move(p));
      tile_of.push_back(static_cast<int>(t));
    }
  }
  PipelineResult result = run_pipeline_on_patches(patches, tile_of, config);
  result.diagnostics.tiles = static_cast<int>(tiles.size());
  result.diagnostics.extraction = total;
  return result;
}

}  // namespace demblind::pipeline
