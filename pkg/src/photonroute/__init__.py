"""Photonic-circuit routing of single photons: MZI transfer model, heater calibration,
Clements meshes, time-tag simulation and count analysis."""

from .analysis import AnalysisSettings, analyze_stream, photon_area, select_window, splitting_ratio
from .calibration import Anchor, PhaseCalibration, fit_couplers_from_extinction, fit_model, fit_phase_calibration, predict_sweep
from .config import RunConfig
from .errors import (
    ConfigError,
    DomainError,
    FitError,
    InfeasibleFitError,
    NonUnitaryError,
    ParseError,
    PhotonRouteError,
    UnderdeterminedFitError,
)
from .mesh import MeshProgram, MziSetting, clements_decompose, mesh_reconstruct, synthesize_switch
from .source import ExperimentConfig, TimeTagStream, run_experiment
from .xfer import CircuitModel, CouplerSpec, mzi_matrix

__all__ = [
    "AnalysisSettings", "Anchor", "CircuitModel", "ConfigError", "CouplerSpec", "DomainError",
    "ExperimentConfig", "FitError", "InfeasibleFitError", "MeshProgram", "MziSetting", "NonUnitaryError",
    "ParseError", "PhaseCalibration", "PhotonRouteError", "RunConfig", "TimeTagStream",
    "UnderdeterminedFitError", "analyze_stream", "clements_decompose", "fit_couplers_from_extinction",
    "fit_model", "fit_phase_calibration", "mesh_reconstruct", "mzi_matrix", "photon_area",
    "predict_sweep", "run_experiment", "select_window", "splitting_ratio", "synthesize_switch",
]
