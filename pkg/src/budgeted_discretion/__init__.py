"""Optimal spending of a finite override budget over a finite horizon."""

from .distributions import (
    DiffLaw,
    Family,
    GainModel,
    ShapeSpec,
    base_cdf,
    base_quantile,
    base_threshold,
    diff_cdf,
    diff_law,
    excess_kurtosis,
    make_spec,
    mc_estimate,
    mean_normalized,
    partial_expectation_mis,
    psi_of_shape,
)

__version__ = "0.1.0"
