#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "demblind/pipeline.hpp"
#include "demblind/regression.hpp"

namespace demblind::records {

/// Group estimates CSV with columns
/// group_id,param_kind,n_patches,nstk_mean,z_mean,estimate,crlb_sd.
/// A leading '#' line records units and is skipped when reading.
std::string groups_csv(std::span<const regression::GroupEstimate> variance,
                       std::span<const regression::GroupEstimate> corr_width);

/// Throws FormatError on a malformed row or header.
std::vector<regression::GroupEstimate> parse_groups_csv(std::string_view text);

std::string diagnostics_json(const pipeline::Diagnostics& diagnostics);

struct ModelReport {
  likelihood::Target param_kind = likelihood::Target::sigma_e2;
  regression::ModelFit fit;
  int n_outliers = 0;
  bool selected = false;
  bool low_significance = false;
};

std::string model_report_json(const ModelReport& report);
/// Throws FormatError.
ModelReport parse_model_report(std::string_view text);

std::string partial_residuals_csv(const regression::ModelFit& fit,
                                  std::span<const regression::PartialResidual> rows);

/// Shortest round-trip decimal form.
std::string format_double(double v);

}  // namespace demblind::records
