"""Geometric-phase corrections for a two-level system moving above a
lossy dielectric sheet: kernel tabulation, master-equation evolution,
phase extraction, parameter sweeps and figure presets."""

from .config import NumericsConfig, OutputConfig, RunConfig, parse_config
from .errors import QfgpError
from .evolution import Trajectory, evolve
from .figures import CALIBRATED_COUPLING, FIGURE_NAMES, figure_dataset
from .kernels import KernelConfig, KernelTable, kernel_pair, tabulate
from .params import (
    DEFAULT_COUPLING,
    GeometryConfig,
    MaterialParams,
    SystemParams,
    preset,
    surface_response,
)
from .phase import PhaseSeries, geometric_phase, phase_series
from .sweeps import (
    CalibrationResult,
    FitResult,
    SweepResult,
    SweepSpec,
    calibrate_coupling,
    fit_velocity_scaling,
    run_sweep,
)

__version__ = "0.1.0"

__all__ = [
    "CALIBRATED_COUPLING",
    "CalibrationResult",
    "DEFAULT_COUPLING",
    "FIGURE_NAMES",
    "FitResult",
    "GeometryConfig",
    "KernelConfig",
    "KernelTable",
    "MaterialParams",
    "NumericsConfig",
    "OutputConfig",
    "PhaseSeries",
    "QfgpError",
    "RunConfig",
    "SweepResult",
    "SweepSpec",
    "SystemParams",
    "Trajectory",
    "calibrate_coupling",
    "evolve",
    "figure_dataset",
    "fit_velocity_scaling",
    "geometric_phase",
    "kernel_pair",
    "parse_config",
    "phase_series",
    "preset",
    "run_sweep",
    "surface_response",
    "tabulate",
    "__version__",
]
