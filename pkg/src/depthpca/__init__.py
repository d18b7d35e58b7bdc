"""Robust principal components built on depth-based multivariate ranks."""

__version__ = "0.1.0"

from .depth import DepthKind, DepthModel, EllipticalModel, fit_depth, population_depth  # noqa: E402
from .diagnostics import DiagnosticsReport, Flag, diagnose, planted_outlier_data  # noqa: E402
from .errors import (ConvergenceFailure, DegenerateData, DegenerateModel, DepthPCAError,  # noqa: E402
                     InvalidInput, NotPositiveDefinite, NumericalFailure)
from .ranks import rank_transform, spatial_median, spatial_sign  # noqa: E402
from .scatter import EstimatorKind, ScatterFit, fit_scatter, recover_shape  # noqa: E402

__all__ = [
    "DepthKind", "DepthModel", "EllipticalModel", "fit_depth", "population_depth",
    "DiagnosticsReport", "Flag", "diagnose", "planted_outlier_data",
    "ConvergenceFailure", "DegenerateData", "DegenerateModel", "DepthPCAError",
    "InvalidInput", "NotPositiveDefinite", "NumericalFailure",
    "rank_transform", "spatial_median", "spatial_sign",
    "EstimatorKind", "ScatterFit", "fit_scatter", "recover_shape",
]
