#pragma once

#include "demblind/config.hpp"

namespace demblind::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kNoInformativeData = 3, kIo = 4 };

/// Writes DEM/QA tile pairs, manifest.txt, truth.json and windows.csv.
int cmd_simulate(const config::RunConfig& rc);
/// Runs the pipeline over the configured tiles; writes groups.csv and
/// diagnostics.json.
int cmd_estimate(const config::RunConfig& rc);
/// Fits the candidate models to the groups CSV; writes one report per
/// candidate, the selected report and partial residuals per parameter.
int cmd_fit(const config::RunConfig& rc);
/// Renders report.md from the selected model reports.
int cmd_report(const config::RunConfig& rc);

/// `demblind simulate|estimate|fit|report --config <path> [--seed N] [--out DIR]`
int run(int argc, char** argv);

}  // namespace demblind::cli
