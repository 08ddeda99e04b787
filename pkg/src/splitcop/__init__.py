"""Bivariate split normal copula: construction, grid-search likelihood
estimation of upper and lower tail correlations, Monte Carlo critical values
and an AR-GARCH-t empirical pipeline."""

__version__ = "0.1.0"

from .errors import ConfigError, InputError, NumericalError, ParameterError, SplitcopError
from .splitnormal import SplitNormalParams, complete_params
from .copula import CopulaModel, MarginalTable, build_marginal_table, build_model, copula_density, log_likelihood
from .estimation import FitResult, GridSpec, RollingResult, fit_grid, fit_rolling
from .simulation import (CriticalValueTable, CriticalValues, MomentsRow, TestDecision, interpolate_cv,
                         mc_critical_values, mc_moments, one_sided_test)
from .marginals import GarchFit, GarchSpec, fit_garch, pit, select_ar_order

__all__ = [
    "ConfigError", "InputError", "NumericalError", "ParameterError", "SplitcopError",
    "SplitNormalParams", "complete_params",
    "CopulaModel", "MarginalTable", "build_marginal_table", "build_model", "copula_density", "log_likelihood",
    "FitResult", "GridSpec", "RollingResult", "fit_grid", "fit_rolling",
    "CriticalValueTable", "CriticalValues", "MomentsRow", "TestDecision", "interpolate_cv",
    "mc_critical_values", "mc_moments", "one_sided_test",
    "GarchFit", "GarchSpec", "fit_garch", "pit", "select_ar_order",
]
