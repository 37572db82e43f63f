#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "demblind/covmodel.hpp"
#include "demblind/error.hpp"
#include "demblind/likelihood.hpp"
#include "demblind/pipeline.hpp"
#include "demblind/regression.hpp"
#include "demblind/simulate.hpp"

namespace py = pybind11;
using namespace demblind;
using covmodel::NoiseShape;
using covmodel::PatchGeometry;
using covmodel::Theta;
using likelihood::Target;

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Target parse_target(const std::string& s) {
  if (s == "variance" || s == "sigma_e2") return Target::sigma_e2;
  if (s == "corr_width" || s == "sigma_corr2") return Target::sigma_corr2;
  throw InvalidArgument("target must be 'variance' or 'corr_width'");
}

covmodel::Param parse_param(const std::string& s) {
  if (s == "sigma_x2") return covmodel::Param::sigma_x2;
  if (s == "hurst") return covmodel::Param::hurst;
  if (s == "sigma_e2") return covmodel::Param::sigma_e2;
  if (s == "sigma_corr2") return covmodel::Param::sigma_corr2;
  throw InvalidArgument("unknown parameter '" + s + "'");
}

covmodel::Coords to_coords(const std::vector<std::pair<int, int>>& v) {
  covmodel::Coords c;
  for (auto [t, s] : v) c.push_back({t, s});
  return c;
}

raster::RasterTile to_tile(const RowMatrix& m, double cell_size, double nodata) {
  raster::RasterTile t;
  t.nrows = static_cast<int>(m.rows());
  t.ncols = static_cast<int>(m.cols());
  t.cell_size = cell_size;
  t.nodata = nodata;
  t.values.assign(m.data(), m.data() + m.size());
  t.validate();
  return t;
}

RowMatrix to_array(const raster::RasterTile& t) {
  return Eigen::Map<const RowMatrix>(t.values.data(), t.nrows, t.ncols);
}

std::vector<regression::ModelKind> parse_models(const std::vector<std::string>& names) {
  std::vector<regression::ModelKind> out;
  for (const auto& n : names) out.push_back(regression::parse_model_kind(n));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "DEM measurement-error estimation core";

  py::register_exception<DegenerateModel>(m, "DegenerateModel", PyExc_RuntimeError);
  py::register_exception<UnboundedCrlb>(m, "UnboundedCrlb", PyExc_RuntimeError);
  py::register_exception<ModelInestimable>(m, "ModelInestimable", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const InvalidArgument& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const IoError& e) {
      PyErr_SetString(PyExc_OSError, e.what());
    }
  });

  py::class_<Theta>(m, "Theta")
      .def(py::init([](double sigma_x2, double hurst, double sigma_e2, double sigma_corr2,
                       const std::string& shape) {
             Theta t;
             t.fbm = {sigma_x2, hurst};
             t.noise = {sigma_e2, sigma_corr2, covmodel::parse_noise_shape(shape)};
             t.validate();
             return t;
           }),
           py::arg("sigma_x2") = 0.0, py::arg("hurst") = 0.5, py::arg("sigma_e2") = 0.0,
           py::arg("sigma_corr2") = 0.25, py::arg("shape") = "gaussian")
      .def_property("sigma_x2", [](const Theta& t) { return t.fbm.sigma_x2; },
                    [](Theta& t, double v) { t.fbm.sigma_x2 = v; })
      .def_property("hurst", [](const Theta& t) { return t.fbm.hurst; }, [](Theta& t, double v) { t.fbm.hurst = v; })
      .def_property("sigma_e2", [](const Theta& t) { return t.noise.sigma_e2; },
                    [](Theta& t, double v) { t.noise.sigma_e2 = v; })
      .def_property("sigma_corr2", [](const Theta& t) { return t.noise.sigma_corr2; },
                    [](Theta& t, double v) { t.noise.sigma_corr2 = v; })
      .def_property_readonly("shape", [](const Theta& t) { return std::string(covmodel::to_string(t.noise.shape)); })
      .def("__repr__", [](const Theta& t) {
        return "Theta(sigma_x2=" + std::to_string(t.fbm.sigma_x2) + ", hurst=" + std::to_string(t.fbm.hurst) +
               ", sigma_e2=" + std::to_string(t.noise.sigma_e2) + ", sigma_corr2=" +
               std::to_string(t.noise.sigma_corr2) + ", shape='" + std::string(covmodel::to_string(t.noise.shape)) +
               "')";
      });

  // Covariance model
  m.def("square_patch_coords", [](int half_size) {
    std::vector<std::pair<int, int>> out;
    for (const auto& c : covmodel::square_patch_coords(half_size)) out.emplace_back(c.t, c.s);
    return out;
  }, py::arg("half_size"), "Offsets (t, s) of a (2h+1)^2 patch, centre excluded.");
  m.def("fbm_increment_cov",
        [](double t1, double s1, double t2, double s2, double sigma_x2, double hurst) {
          return covmodel::fbm_increment_cov(t1, s1, t2, s2, {sigma_x2, hurst});
        },
        py::arg("t1"), py::arg("s1"), py::arg("t2"), py::arg("s2"), py::arg("sigma_x2"), py::arg("hurst"));
  m.def("noise_cov",
        [](double d, double sigma_e2, double sigma_corr2, const std::string& shape) {
          return covmodel::noise_cov(d, {sigma_e2, sigma_corr2, covmodel::parse_noise_shape(shape)});
        },
        py::arg("d"), py::arg("sigma_e2"), py::arg("sigma_corr2"), py::arg("shape") = "gaussian");
  m.def("observed_cov_matrix",
        [](int half_size, const Theta& theta) { return covmodel::observed_cov_matrix(PatchGeometry::square(half_size), theta); },
        py::arg("half_size"), py::arg("theta"));
  m.def("observed_cov_matrix",
        [](const std::vector<std::pair<int, int>>& coords, const Theta& theta) {
          return covmodel::observed_cov_matrix(to_coords(coords), theta);
        },
        py::arg("coords"), py::arg("theta"));
  m.def("cov_derivative",
        [](int half_size, const Theta& theta, const std::string& which) {
          return covmodel::cov_derivative(PatchGeometry::square(half_size), theta, parse_param(which));
        },
        py::arg("half_size"), py::arg("theta"), py::arg("which"));
  m.def("sample_patch",
        [](int half_size, const Theta& theta, std::uint64_t seed) {
          return covmodel::sample_patch(PatchGeometry::square(half_size), theta, seed);
        },
        py::arg("half_size"), py::arg("theta"), py::arg("seed"));

  // Likelihood
  m.def("log_likelihood",
        [](const Eigen::VectorXd& z, int half_size, const Theta& theta) {
          return likelihood::log_likelihood(z, PatchGeometry::square(half_size), theta);
        },
        py::arg("increments"), py::arg("half_size"), py::arg("theta"));
  m.def("fisher_information",
        [](int half_size, const Theta& theta) {
          return Eigen::MatrixXd(likelihood::fisher_information(PatchGeometry::square(half_size), theta));
        },
        py::arg("half_size"), py::arg("theta"));
  m.def("crlb",
        [](int half_size, const Theta& theta, const std::string& target, double hurst_prior_sd) {
          return likelihood::crlb(PatchGeometry::square(half_size), theta, parse_target(target), hurst_prior_sd);
        },
        py::arg("half_size"), py::arg("theta"), py::arg("target"), py::arg("hurst_prior_sd"));
  m.def("homogeneity_index",
        [](int half_size, const Theta& theta, const std::string& target, double hurst_prior_sd) {
          return pipeline::homogeneity_index(PatchGeometry::square(half_size), theta, parse_target(target),
                                             hurst_prior_sd);
        },
        py::arg("half_size"), py::arg("theta"), py::arg("target") = "variance", py::arg("hurst_prior_sd") = 0.25);
  m.def("combine_crlb", [](const std::vector<double>& sds) { return likelihood::combine_crlb(sds); }, py::arg("sds"));
  m.def("estimate_texture",
        [](const Eigen::VectorXd& z, int half_size, double sigma_e2, double sigma_corr2, const std::string& shape) {
          return likelihood::estimate_texture(z, PatchGeometry::square(half_size),
                                              {sigma_e2, sigma_corr2, covmodel::parse_noise_shape(shape)})
              .theta;
        },
        py::arg("increments"), py::arg("half_size"), py::arg("sigma_e2"), py::arg("sigma_corr2") = 0.25,
        py::arg("shape") = "gaussian");
  m.def("estimate_sigma_e2",
        [](const Eigen::VectorXd& z, int half_size, double hurst_mean, double hurst_sd, double sigma_corr2,
           const std::string& shape) {
          return likelihood::estimate_sigma_e2(z, PatchGeometry::square(half_size), {hurst_mean, hurst_sd},
                                               sigma_corr2, covmodel::parse_noise_shape(shape))
              .theta;
        },
        py::arg("increments"), py::arg("half_size"), py::arg("hurst_mean") = 0.5, py::arg("hurst_sd") = 0.25,
        py::arg("sigma_corr2") = 0.25, py::arg("shape") = "gaussian");
  m.def("estimate_sigma_corr2",
        [](const Eigen::VectorXd& z, int half_size, double hurst_mean, double hurst_sd, double sigma_e2,
           const std::string& shape) {
          return likelihood::estimate_sigma_corr2(z, PatchGeometry::square(half_size), {hurst_mean, hurst_sd},
                                                  sigma_e2, covmodel::parse_noise_shape(shape))
              .theta;
        },
        py::arg("increments"), py::arg("half_size"), py::arg("hurst_mean") = 0.5, py::arg("hurst_sd") = 0.25,
        py::arg("sigma_e2") = 1.0, py::arg("shape") = "gaussian");

  // Regression
  py::class_<regression::GroupEstimate>(m, "GroupEstimate")
      .def(py::init([](const std::string& param_kind, double value, double crlb_sd, double n_stk, double z,
                       int n_patches) {
             return regression::GroupEstimate{parse_target(param_kind), value, crlb_sd, {n_stk, z}, n_patches};
           }),
           py::arg("param_kind"), py::arg("value"), py::arg("crlb_sd"), py::arg("n_stk"), py::arg("z"),
           py::arg("n_patches") = 1)
      .def_property_readonly("param_kind",
                             [](const regression::GroupEstimate& e) { return std::string(likelihood::to_string(e.param_kind)); })
      .def_readwrite("value", &regression::GroupEstimate::value)
      .def_readwrite("crlb_sd", &regression::GroupEstimate::crlb_sd)
      .def_property_readonly("n_stk", [](const regression::GroupEstimate& e) { return e.mean_predictor.n_stk; })
      .def_property_readonly("z", [](const regression::GroupEstimate& e) { return e.mean_predictor.z; })
      .def_readonly("n_patches", &regression::GroupEstimate::n_patches);

  py::class_<regression::ModelFit>(m, "ModelFit")
      .def_property_readonly("model", [](const regression::ModelFit& f) { return std::string(regression::to_string(f.model)); })
      .def_property_readonly("terms", [](const regression::ModelFit& f) { return regression::term_names(f.model); })
      .def_readonly("coeffs", &regression::ModelFit::coeffs)
      .def_readonly("coeff_sds", &regression::ModelFit::coeff_sds)
      .def_readonly("t_stats", &regression::ModelFit::t_stats)
      .def_readonly("r2", &regression::ModelFit::r2)
      .def_readonly("n_used", &regression::ModelFit::n_used)
      .def_readonly("outlier_mask", &regression::ModelFit::outlier_mask);

  m.def("design_row",
        [](const std::string& model, double n_stk, double z) {
          return regression::design_row(regression::parse_model_kind(model), {n_stk, z});
        },
        py::arg("model"), py::arg("n_stk"), py::arg("z"));
  m.def("fit_robust_wls",
        [](const std::vector<regression::GroupEstimate>& est, const std::string& model) {
          return regression::fit_robust_wls(est, regression::parse_model_kind(model));
        },
        py::arg("estimates"), py::arg("model"));
  m.def("select_model",
        [](const std::vector<regression::GroupEstimate>& est, const std::vector<std::string>& candidates,
           double t_min) {
          const auto kinds = candidates.empty() ? regression::candidate_models(0) : parse_models(candidates);
          const auto sel = regression::select_model(est, kinds, t_min);
          py::dict out;
          out["selected"] = sel.selected;
          out["low_significance"] = sel.low_significance;
          out["candidates"] = sel.candidates;
          std::vector<std::string> bad;
          for (auto k : sel.inestimable) bad.emplace_back(regression::to_string(k));
          out["inestimable"] = bad;
          return out;
        },
        py::arg("estimates"), py::arg("candidates") = std::vector<std::string>{}, py::arg("t_min") = 10.0);
  m.def("predict",
        [](const std::string& model, const Eigen::VectorXd& coeffs, double n_stk, double z) {
          return regression::predict(regression::parse_model_kind(model), coeffs, {n_stk, z});
        },
        py::arg("model"), py::arg("coeffs"), py::arg("n_stk"), py::arg("z"));

  // Simulation and pipeline
  py::class_<simulate::SimulationConfig>(m, "SimulationConfig")
      .def(py::init<>())
      .def_readwrite("seed", &simulate::SimulationConfig::seed)
      .def_readwrite("tiles", &simulate::SimulationConfig::tiles)
      .def_readwrite("patches_per_side", &simulate::SimulationConfig::patches_per_side)
      .def_readwrite("region_patches", &simulate::SimulationConfig::region_patches)
      .def_readwrite("half_size", &simulate::SimulationConfig::half_size)
      .def_readwrite("nstk_min", &simulate::SimulationConfig::nstk_min)
      .def_readwrite("nstk_max", &simulate::SimulationConfig::nstk_max)
      .def_readwrite("z_min", &simulate::SimulationConfig::z_min)
      .def_readwrite("z_max", &simulate::SimulationConfig::z_max)
      .def_readwrite("pure_noise_fraction", &simulate::SimulationConfig::pure_noise_fraction)
      .def("set_variance_model",
           [](simulate::SimulationConfig& c, const std::string& kind, const Eigen::VectorXd& coeffs) {
             c.variance = {regression::parse_model_kind(kind), coeffs};
           })
      .def("set_corr_width_model",
           [](simulate::SimulationConfig& c, const std::string& kind, const Eigen::VectorXd& coeffs) {
             c.corr_width = {regression::parse_model_kind(kind), coeffs};
           });

  m.def("simulate", [](const simulate::SimulationConfig& config) {
    const auto sim = simulate::simulate(config);
    py::list tiles;
    for (const auto& t : sim.tiles) tiles.append(py::make_tuple(to_array(t.dem), to_array(t.qa), t.hurst));
    py::list windows;
    for (const auto& w : sim.windows) {
      py::dict d;
      d["tile"] = w.tile;
      d["row"] = w.centre.row;
      d["col"] = w.centre.col;
      d["n_stk"] = w.predictor.n_stk;
      d["z"] = w.predictor.z;
      d["sigma_x2"] = w.sigma_x2;
      d["hurst"] = w.hurst;
      d["sigma_e2"] = w.sigma_e2;
      d["sigma_corr2"] = w.sigma_corr2;
      windows.append(d);
    }
    py::dict out;
    out["tiles"] = tiles;
    out["windows"] = windows;
    return out;
  }, py::arg("config"), "Returns {'tiles': [(dem, qa, hurst)], 'windows': [dict]}.");

  py::class_<pipeline::PipelineConfig>(m, "PipelineConfig")
      .def(py::init<>())
      .def_readwrite("patch_half_size", &pipeline::PipelineConfig::patch_half_size)
      .def_readwrite("r_ha_threshold", &pipeline::PipelineConfig::r_ha_threshold)
      .def_readwrite("group_size_cap", &pipeline::PipelineConfig::group_size_cap)
      .def_readwrite("sn_ratio_ti", &pipeline::PipelineConfig::sn_ratio_ti)
      .def_readwrite("predictor_weights", &pipeline::PipelineConfig::predictor_weights)
      .def_readwrite("max_iterations", &pipeline::PipelineConfig::max_iterations)
      .def_readwrite("m_choice", &pipeline::PipelineConfig::m_choice)
      .def_readwrite("t_min", &pipeline::PipelineConfig::t_min)
      .def_readwrite("convergence_tol", &pipeline::PipelineConfig::convergence_tol);

  m.def("run_pipeline",
        [](const std::vector<std::pair<RowMatrix, RowMatrix>>& tiles, const pipeline::PipelineConfig& config,
           double cell_size, double nodata) {
          std::vector<pipeline::TileInput> in;
          for (const auto& [dem, qa] : tiles) in.push_back({to_tile(dem, cell_size, nodata), to_tile(qa, cell_size, nodata)});
          pipeline::PipelineResult res;
          {
            py::gil_scoped_release release;
            res = pipeline::run_pipeline(in, config);
          }
          py::dict diag;
          diag["status"] = res.diagnostics.status;
          diag["iterations"] = res.diagnostics.iterations;
          diag["converged"] = res.diagnostics.converged;
          diag["reliable_patches"] = res.diagnostics.reliable_patches;
          diag["ti_patches"] = res.diagnostics.ti_patches;
          py::dict out;
          out["variance"] = res.variance;
          out["corr_width"] = res.corr_width;
          out["diagnostics"] = diag;
          return out;
        },
        py::arg("tiles"), py::arg("config") = pipeline::PipelineConfig{}, py::arg("cell_size") = 1.0,
        py::arg("nodata") = -9999.0, "tiles: list of (dem, qa) 2-D arrays.");
}
