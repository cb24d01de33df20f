"""Kalman filter noise auto-tuning over multiple prediction intervals."""
from .kalman import FilterError, FilterState, FilterTrace, predict, run_filter, update
from .metrics import CostKind, chi_square_band, j_cost, nees, nis, two_sigma_coverage
from .oracle import expected_nees, multi_dt_surface, nees_line_scan, oracle_grid
from .simulate import MonteCarloResult, ScenarioConfig, control_input, monte_carlo, simulate_truth
from .surrogate import Family, Kernel, build_state, fit_hyperparams, posterior
from .sysmodel import (ContinuousModel, DiscreteModel, NoiseIntensities, SensorKind, discretize,
                       matrix_exponential, tracking_1d, tracking_2d)
from .tuner import (TuneConfig, TuneResult, bayesopt_tune, expected_improvement, multi_dt_cost, nelder_mead,
                    nelder_mead_tune)

__version__ = "0.1.0"

__all__ = [
    "ContinuousModel", "DiscreteModel", "NoiseIntensities", "SensorKind", "discretize", "matrix_exponential",
    "tracking_1d", "tracking_2d",
    "FilterError", "FilterState", "FilterTrace", "predict", "update", "run_filter",
    "MonteCarloResult", "ScenarioConfig", "control_input", "monte_carlo", "simulate_truth",
    "CostKind", "chi_square_band", "j_cost", "nees", "nis", "two_sigma_coverage",
    "expected_nees", "multi_dt_surface", "nees_line_scan", "oracle_grid",
    "Family", "Kernel", "build_state", "fit_hyperparams", "posterior",
    "TuneConfig", "TuneResult", "bayesopt_tune", "expected_improvement", "multi_dt_cost", "nelder_mead",
    "nelder_mead_tune",
]
