#include "demblind/records.hpp"

#include <charconv>
#include <sstream>

#include <json.hpp>

#include "demblind/error.hpp"

namespace demblind::records {

using nlohmann::json;
using regression::GroupEstimate;

namespace {

constexpr std::string_view kGroupsHeader =
    "group_id,param_kind,n_patches,nstk_mean,z_mean,estimate,crlb_sd";

likelihood::Target parse_target(std::string_view s) {
  if (s == "variance") return likelihood::Target::sigma_e2;
  if (s == "corr_width") return likelihood::Target::sigma_corr2;
  throw FormatError("unknown param_kind '" + std::string(s) + "'");
}

double parse_double(std::string_view s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw FormatError("bad number '" + std::string(s) + "'");
  return v;
}

json vector_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd vector_from(const json& a) {
  if (!a.is_array()) throw FormatError("expected a numeric array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}

json pass_json(const pipeline::PassDiagnostics& p) {
  json j{{"candidates", p.candidates},
         {"groups", p.groups},
         {"discarded_cap", p.discarded_cap},
         {"leftover", p.leftover},
         {"failed_fits", p.failed_fits}};
  j["model"] = p.model ? json(std::string(regression::to_string(*p.model))) : json(nullptr);
  j["coeffs"] = p.coeffs;
  return j;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string groups_csv(std::span<const GroupEstimate> variance,
                       std::span<const GroupEstimate> corr_width) {
  std::string out =
      "# units: variance estimate and crlb_sd in m^2; corr_width in pixels^2; z_mean in m\n";
  out += kGroupsHeader;
  out += '\n';
  int id = 0;
  for (auto list : {variance, corr_width}) {
    for (const auto& e : list) {
      out += std::to_string(id++) + ',' + std::string(likelihood::to_string(e.param_kind)) + ',' +
             std::to_string(e.n_patches) + ',' + format_double(e.mean_predictor.n_stk) + ',' +
             format_double(e.mean_predictor.z) + ',' + format_double(e.value) + ',' +
             format_double(e.crlb_sd) + '\n';
    }
  }
  return out;
}

std::vector<GroupEstimate> parse_groups_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  bool header = false;
  std::vector<GroupEstimate> out;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (!header) {
      if (line != kGroupsHeader) throw FormatError("unexpected groups CSV header");
      header = true;
      continue;
    }
    std::vector<std::string_view> f;
    std::string_view rest = line;
    while (true) {
      const auto comma = rest.find(',');
      f.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (f.size() != 7) throw FormatError("groups CSV line " + std::to_string(line_no) + ": expected 7 fields");
    GroupEstimate e;
    e.param_kind = parse_target(f[1]);
    e.n_patches = static_cast<int>(parse_double(f[2]));
    e.mean_predictor.n_stk = parse_double(f[3]);
    e.mean_predictor.z = parse_double(f[4]);
    e.value = parse_double(f[5]);
    e.crlb_sd = parse_double(f[6]);
    out.push_back(e);
  }
  if (!header) throw FormatError("groups CSV has no header");
  return out;
}

std::string diagnostics_json(const pipeline::Diagnostics& d) {
  json j;
  j["status"] = d.status;
  j["tiles"] = d.tiles;
  j["extraction"] = {{"windows", d.extraction.windows},
                     {"nodata", d.extraction.nodata},
                     {"unreliable", d.extraction.unreliable}};
  j["reliable_patches"] = d.reliable_patches;
  j["ti_patches"] = d.ti_patches;
  j["ni_patches"] = {{"variance", d.ni_patches_variance}, {"corr_width", d.ni_patches_corr_width}};
  j["accepted_groups"] = {{"variance", d.groups_variance}, {"corr_width", d.groups_corr_width}};
  j["iterations"] = d.iterations;
  j["converged"] = d.converged;
  j["predictor_coverage"] = {{"n_stk", {d.predictor_min.n_stk, d.predictor_max.n_stk}},
                             {"z", {d.predictor_min.z, d.predictor_max.z}}};
  json history = json::array();
  for (const auto& it : d.history) {
    history.push_back({{"iteration", it.iteration},
                       {"ti_patches", it.ti_patches},
                       {"tiles_without_ti", it.tiles_without_ti},
                       {"variance", pass_json(it.variance)},
                       {"corr_width", pass_json(it.corr_width)}});
  }
  j["history"] = std::move(history);
  return j.dump(2) + "\n";
}

std::string model_report_json(const ModelReport& r) {
  json j;
  j["param_kind"] = std::string(likelihood::to_string(r.param_kind));
  j["model_kind"] = std::string(regression::to_string(r.fit.model));
  j["terms"] = regression::term_names(r.fit.model);
  j["coeffs"] = vector_json(r.fit.coeffs);
  j["coeff_sds"] = vector_json(r.fit.coeff_sds);
  j["t_stats"] = vector_json(r.fit.t_stats);
  j["r2"] = r.fit.r2;
  j["n_used"] = r.fit.n_used;
  j["n_outliers"] = r.n_outliers;
  j["m_exponent"] = regression::m_exponent(r.fit.model);
  j["selected"] = r.selected;
  j["low_significance"] = r.low_significance;
  return j.dump(2) + "\n";
}

ModelReport parse_model_report(std::string_view text) {
  try {
    const json j = json::parse(text);
    ModelReport r;
    r.param_kind = parse_target(j.at("param_kind").get<std::string>());
    r.fit.model = regression::parse_model_kind(j.at("model_kind").get<std::string>());
    r.fit.coeffs = vector_from(j.at("coeffs"));
    r.fit.coeff_sds = vector_from(j.at("coeff_sds"));
    r.fit.t_stats = vector_from(j.at("t_stats"));
    r.fit.r2 = j.at("r2").get<double>();
    r.fit.n_used = j.at("n_used").get<int>();
    r.n_outliers = j.at("n_outliers").get<int>();
    r.selected = j.value("selected", false);
    r.low_significance = j.value("low_significance", false);
    if (r.fit.coeffs.size() != regression::regressor_count(r.fit.model))
      throw FormatError("coefficient count does not match model_kind");
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("model report: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("model report: ") + e.what());
  }
}

std::string partial_residuals_csv(const regression::ModelFit& fit,
                                  std::span<const regression::PartialResidual> rows) {
  const auto names = regression::term_names(fit.model);
  std::string out = "term,estimate_index,regressor,partial_residual\n";
  for (const auto& r : rows) {
    out += names[static_cast<std::size_t>(r.term)] + ',' + std::to_string(r.estimate_index) + ',' +
           format_double(r.regressor) + ',' + format_double(r.residual) + '\n';
  }
  return out;
}

}  // namespace demblind::records
