"""Projections of SDEs onto submanifolds and Gaussian projection filters."""

from .errors import (
    BoundaryError,
    ConfigError,
    DegenerateChartError,
    NumericalError,
    OutsideTubularNeighborhoodError,
    ProjFilterError,
)
from .estimators import GaussianFilter
from .family import GAUSSIAN, GaussHermite, GaussianFamily, L2Representation, expectation, family_metric
from .filters import (
    FILTERS,
    FilterModel,
    FilterState,
    LinearGaussianModel,
    cubic_sensor,
    ekf_step,
    forward_operator,
    gaussian_adf_step,
    ito_jet_filter_step,
    ito_vector_filter_step,
    kalman_step,
    ks_coefficients,
    linear_model,
    strat_filter_step,
)
from .geometry import Embedding, circle, ellipse, metric_projection, metric_tensor, tangent_projection
from .projection import ito_jet_projection, ito_vector_projection, order_probe, project, stratonovich_projection
from .reference import GridDensity, fd_ks_step, grid_moments, residual
from .sde import ItoSde, StratonovichSde, ito_to_stratonovich, simulate_path, stratonovich_to_ito

__version__ = "0.1.0"
