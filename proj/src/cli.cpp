#include "demblind/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <utility>

#include <CLI11.hpp>
#include <json.hpp>

#include "demblind/error.hpp"
#include "demblind/fileio.hpp"
#include "demblind/records.hpp"

namespace demblind::cli {

namespace fs = std::filesystem;
using likelihood::Target;

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string tile_name(const char* stem, int index, raster::RasterFormat format) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%03d", stem, index);
  return std::string(buf) + (format == raster::RasterFormat::ascii_grid ? ".asc" : ".f32");
}

nlohmann::json truth_json(const simulate::TruthModel& m) {
  std::vector<double> c(m.coeffs.data(), m.coeffs.data() + m.coeffs.size());
  return {{"model_kind", std::string(regression::to_string(m.kind))}, {"coeffs", c}};
}

std::vector<regression::GroupEstimate> of_kind(const std::vector<regression::GroupEstimate>& all,
                                               Target target) {
  std::vector<regression::GroupEstimate> out;
  for (const auto& e : all) {
    if (e.param_kind == target) out.push_back(e);
  }
  return out;
}

double elevation_part(const regression::ModelFit& fit, const raster::PredictorVector& p) {
  const auto names = regression::term_names(fit.model);
  const Eigen::VectorXd row = regression::design_row(fit.model, p);
  double sum = 0.0;
  for (std::size_t j = 0; j < names.size(); ++j) {
    if (names[j].find('Z') != std::string::npos) sum += fit.coeffs[static_cast<Eigen::Index>(j)] * row[static_cast<Eigen::Index>(j)];
  }
  return sum;
}

std::string fmt(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
  return buf;
}

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const IoError& e) {
    std::cerr << "demblind: " << e.what() << "\n";
    return kIo;
  } catch (const FormatError& e) {
    std::cerr << "demblind: " << e.what() << "\n";
    return kIo;
  } catch (const DimensionMismatch& e) {
    std::cerr << "demblind: " << e.what() << "\n";
    return kIo;
  } catch (const InvalidArgument& e) {
    std::cerr << "demblind: " << e.what() << "\n";
    return kUsage;
  }
}

}  // namespace

int cmd_simulate(const config::RunConfig& rc) {
  return guarded([&] {
    simulate::SimulationConfig sc = rc.simulation;
    sc.seed = rc.seed;
    const simulate::Simulation sim = simulate::simulate(sc);
    ensure_dir(rc.out_dir);

    std::string manifest = "# dem_path qa_path\n";
    nlohmann::json tiles = nlohmann::json::array();
    for (std::size_t t = 0; t < sim.tiles.size(); ++t) {
      const auto dem = tile_name("dem", static_cast<int>(t), rc.format);
      const auto qa = tile_name("qa", static_cast<int>(t), rc.format);
      raster::save_raster(sim.tiles[t].dem, rc.out_dir / dem, rc.format);
      raster::save_raster(sim.tiles[t].qa, rc.out_dir / qa, rc.format);
      manifest += dem + " " + qa + "\n";
      tiles.push_back({{"dem", dem}, {"qa", qa}, {"hurst", sim.tiles[t].hurst}});
    }
    write_file_atomic(rc.out_dir / "manifest.txt", manifest);

    std::string windows = "tile,row,col,n_stk,z,sigma_x2,hurst,sigma_e2,sigma_corr2\n";
    for (const auto& w : sim.windows) {
      windows += std::to_string(w.tile) + ',' + std::to_string(w.centre.row) + ',' +
                 std::to_string(w.centre.col) + ',' + records::format_double(w.predictor.n_stk) + ',' +
                 records::format_double(w.predictor.z) + ',' + records::format_double(w.sigma_x2) + ',' +
                 records::format_double(w.hurst) + ',' + records::format_double(w.sigma_e2) + ',' +
                 records::format_double(w.sigma_corr2) + '\n';
    }
    write_file_atomic(rc.out_dir / "windows.csv", windows);

    nlohmann::json truth;
    truth["seed"] = sc.seed;
    truth["noise_shape"] = std::string(covmodel::to_string(sc.shape));
    truth["units"] = "elevation m; sigma_e2 m^2; sigma_corr2 pixels^2";
    truth["patch_half_size"] = sc.half_size;
    truth["variance"] = truth_json(sc.variance);
    truth["corr_width"] = truth_json(sc.corr_width);
    truth["tiles"] = std::move(tiles);
    truth["windows"] = sim.windows.size();
    write_file_atomic(rc.out_dir / "truth.json", truth.dump(2) + "\n");
    std::cerr << "simulate: " << sim.tiles.size() << " tiles, " << sim.windows.size()
              << " windows -> " << rc.out_dir.string() << "\n";
    return static_cast<int>(kOk);
  });
}

int cmd_estimate(const config::RunConfig& rc) {
  return guarded([&] {
    if (rc.tiles.empty()) {
      std::cerr << "estimate: no input tiles (use 'tile' or 'manifest' in the config)\n";
      return static_cast<int>(kUsage);
    }
    std::vector<pipeline::TileInput> tiles;
    for (const auto& t : rc.tiles) {
      pipeline::TileInput in{raster::load_raster(t.dem, rc.format), raster::load_raster(t.qa, rc.format)};
      if (rc.downsample > 1) {
        in.dem = raster::block_downsample(in.dem, rc.downsample);
        in.qa = raster::block_downsample(in.qa, rc.downsample);
      }
      tiles.push_back(std::move(in));
    }
    const auto result = pipeline::run_pipeline(tiles, rc.pipeline);
    ensure_dir(rc.out_dir);
    write_file_atomic(rc.out_dir / "groups.csv", records::groups_csv(result.variance, result.corr_width));
    write_file_atomic(rc.out_dir / "diagnostics.json", records::diagnostics_json(result.diagnostics));
    std::cerr << "estimate: " << result.variance.size() << " variance and " << result.corr_width.size()
              << " corr_width groups after " << result.diagnostics.iterations << " iterations ("
              << result.diagnostics.status << ")\n";
    return static_cast<int>(result.diagnostics.status == "ok" ? kOk : kNoInformativeData);
  });
}

int cmd_fit(const config::RunConfig& rc) {
  return guarded([&] {
    const auto all = records::parse_groups_csv(read_file(rc.estimates_path()));
    ensure_dir(rc.out_dir);
    const auto candidates = regression::candidate_models(rc.pipeline.m_choice);
    int fitted = 0;
    for (Target target : {Target::sigma_e2, Target::sigma_corr2}) {
      const std::string kind(likelihood::to_string(target));
      const auto estimates = of_kind(all, target);
      try {
        const auto sel = regression::select_model(estimates, candidates, rc.pipeline.t_min);
        for (const auto& f : sel.candidates) {
          records::ModelReport r{target, f, f.n_outliers(), f.model == sel.selected.model, false};
          if (r.selected) r.low_significance = sel.low_significance;
          write_file_atomic(rc.out_dir / ("fit_" + kind + "_" + std::string(regression::to_string(f.model)) + ".json"),
                            records::model_report_json(r));
        }
        records::ModelReport chosen{target, sel.selected, sel.selected.n_outliers(), true,
                                    sel.low_significance};
        write_file_atomic(rc.out_dir / ("fit_" + kind + "_selected.json"), records::model_report_json(chosen));
        const auto pr = regression::partial_residuals(sel.selected, estimates);
        write_file_atomic(rc.out_dir / ("partial_" + kind + ".csv"),
                          records::partial_residuals_csv(sel.selected, pr));
        std::cerr << "fit: " << kind << " -> " << regression::to_string(sel.selected.model)
                  << " (R^2 " << fmt(sel.selected.r2, 4) << ")"
                  << (sel.low_significance ? " [low significance]" : "") << "\n";
        ++fitted;
      } catch (const ModelInestimable& e) {
        nlohmann::json j{{"param_kind", kind}, {"error", "model_inestimable"}, {"detail", e.what()},
                         {"n_estimates", estimates.size()}};
        write_file_atomic(rc.out_dir / ("fit_" + kind + "_inestimable.json"), j.dump(2) + "\n");
        std::error_code ec;
        fs::remove(rc.out_dir / ("fit_" + kind + "_selected.json"), ec);
        std::cerr << "fit: " << kind << " model inestimable: " << e.what() << "\n";
      }
    }
    return static_cast<int>(fitted > 0 ? kOk : kNoInformativeData);
  });
}

int cmd_report(const config::RunConfig& rc) {
  return guarded([&] {
    std::vector<records::ModelReport> reports;
    for (Target target : {Target::sigma_e2, Target::sigma_corr2}) {
      const auto path = rc.out_dir / ("fit_" + std::string(likelihood::to_string(target)) + "_selected.json");
      if (fs::exists(path)) reports.push_back(records::parse_model_report(read_file(path)));
    }
    if (reports.empty()) throw IoError("no selected model report in " + rc.out_dir.string());

    std::string md = "# DEM error model report\n\n";
    for (const auto& r : reports) {
      const bool variance = r.param_kind == Target::sigma_e2;
      const auto names = regression::term_names(r.fit.model);
      md += std::string("## ") + (variance ? "Error variance (m^2)" : "Correlation width (pixels^2)") + "\n\n";
      md += "Model: `" + std::string(regression::to_string(r.fit.model)) + "`, R^2 = " + fmt(r.fit.r2, 4) +
            ", estimates used = " + std::to_string(r.fit.n_used) + ", outliers = " +
            std::to_string(r.n_outliers) + "\n";
      if (r.low_significance) md += "\nWarning: no candidate reached the t-statistic threshold.\n";
      md += "\n| term | coefficient | SD | t |\n|---|---|---|---|\n";
      for (std::size_t j = 0; j < names.size(); ++j) {
        const auto i = static_cast<Eigen::Index>(j);
        md += "| " + names[j] + " | " + fmt(r.fit.coeffs[i]) + " | " + fmt(r.fit.coeff_sds[i]) + " | " +
              fmt(r.fit.t_stats[i], 5) + " |\n";
      }
      if (!rc.predictions.empty()) {
        md += variance ? "\n| N_stk | Z (m) | sigma_e^2 (m^2) | sigma_e (m) | elevation term (m^2) |\n|---|---|---|---|---|\n"
                       : "\n| N_stk | Z (m) | sigma_Corr^2 (px^2) | sigma_Corr (px) | elevation term (px^2) |\n|---|---|---|---|---|\n";
        for (const auto& p : rc.predictions) {
          const double v = regression::predict(r.fit, p);
          md += "| " + fmt(p.n_stk) + " | " + fmt(p.z) + " | " + fmt(v) + " | " + fmt(std::sqrt(v)) + " | " +
                fmt(elevation_part(r.fit, p)) + " |\n";
        }
      }
      md += "\n";
    }
    ensure_dir(rc.out_dir);
    write_file_atomic(rc.out_dir / "report.md", md);
    std::cout << md;
    return static_cast<int>(kOk);
  });
}

int run(int argc, char** argv) {
  CLI::App app{"Blind estimation of DEM measurement-error models"};
  app.require_subcommand(1);
  fs::path config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::string chosen;
  const std::pair<const char*, const char*> commands[] = {
      {"simulate", "write synthetic DEM/QA tiles with known error models"},
      {"estimate", "run the pipeline and write group estimates"},
      {"fit", "fit and select error models from group estimates"},
      {"report", "render the selected models as markdown"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "flat key = value config file")->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out, "override the output directory");
    sub->callback([&chosen, name] { chosen = name; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(kUsage);
  }

  config::RunConfig rc;
  try {
    rc = config::load_run_config(config_path);
  } catch (const IoError& e) {
    std::cerr << "demblind: " << e.what() << "\n";
    return kIo;
  } catch (const Error& e) {
    std::cerr << "demblind: config: " << e.what() << "\n";
    return kUsage;
  }
  if (seed) rc.seed = *seed;
  if (out) rc.out_dir = *out;

  if (chosen == "simulate") return cmd_simulate(rc);
  if (chosen == "estimate") return cmd_estimate(rc);
  if (chosen == "fit") return cmd_fit(rc);
  return cmd_report(rc);
}

}  // namespace demblind::cli
