"""Dependence structure of market states: clustering, empirical copulas and the K-copula."""

from mstates.empirical_copula import (
    CopulaGrid,
    TailStats,
    pair_copula_histogram,
    rank_transform,
    state_asymmetry,
    state_average_copula,
    tail_corner_masses,
)
from mstates.kcopula import (
    KCopulaParams,
    QuadratureSpec,
    fit_N,
    grid_msd,
    k_bivariate_cdf,
    k_copula_cdf,
    k_copula_density_grid,
    k_marginal_cdf,
    k_marginal_quantile,
    k_pdf_bivariate,
    k_pdf_multivariate,
    wishart_ensemble_variance,
)
from mstates.timeseries import (
    PriceMatrix,
    ReturnMatrix,
    WindowSpec,
    average_correlation,
    compute_returns,
    correlation_matrix,
    local_normalize,
    partition_windows,
)

__version__ = "0.1.0"
