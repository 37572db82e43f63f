"""Blind estimation of DEM measurement-error models (fBm terrain + correlated noise)."""

from ._core import (
    GroupEstimate,
    ModelFit,
    PipelineConfig,
    SimulationConfig,
    Theta,
    combine_crlb,
    cov_derivative,
    crlb,
    design_row,
    estimate_sigma_corr2,
    estimate_sigma_e2,
    estimate_texture,
    fbm_increment_cov,
    fisher_information,
    fit_robust_wls,
    homogeneity_index,
    log_likelihood,
    noise_cov,
    observed_cov_matrix,
    predict,
    run_pipeline,
    sample_patch,
    select_model,
    simulate,
    square_patch_coords,
)

__all__ = [
    "GroupEstimate",
    "ModelFit",
    "PipelineConfig",
    "SimulationConfig",
    "Theta",
    "combine_crlb",
    "cov_derivative",
    "crlb",
    "design_row",
    "estimate_sigma_corr2",
    "estimate_sigma_e2",
    "estimate_texture",
    "fbm_increment_cov",
    "fisher_information",
    "fit_robust_wls",
    "homogeneity_index",
    "log_likelihood",
    "noise_cov",
    "observed_cov_matrix",
    "predict",
    "run_pipeline",
    "sample_patch",
    "select_model",
    "simulate",
    "square_patch_coords",
]
