"""Simulation and exact steering of neutral stochastic delay equations driven by fBm."""

from ._kernels import USING_NUMBA
from .errors import (
    ConfigError,
    DomainError,
    FactorizationError,
    GramianConditionError,
    GridError,
    HypothesisError,
    PicardDivergenceError,
    QuadratureError,
    SteeringDivergenceError,
)
from .evolution import EvolutionFamily, Potential, TimeVaryingGenerator
from .fbm import FbmPath, HurstParameter, TimeGrid
from .mild import DelayFunctions, HistorySegment, NeutralProblem, Trajectory, apply_psi, picard_solve
from .noise import CovarianceOperator, NoiseCoefficient, QfbmPath, sample_qfbm
from .scenario import Scenario, ScenarioConfig, default_config_text, load_config, parse_config
from .spectral import SpectralField
from .steering import ControlSignal, ControlSystem, InputOperator, steer

__version__ = "0.1.0"
