"""Exact steering of the truncated system to a target state x_1 at time T.

W u = int_0^T U(T, s) B u(s) ds is inverted on its range by the minimum-energy
(Gramian) right inverse

    u(s) = B* U(T, s)* Gamma^{-1} y,    Gamma = int_0^T U(T, s) B B* U(T, s)* ds,

with both integrals taken by the same trapezoid rule as the state solver, so
that W (W^{-1} y) = y holds to round-off on the grid.  The control that
steers the state reads the whole noise path (it is anticipative).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import GramianConditionError, GridError, SteeringDivergenceError
from .fbm import TimeGrid
from .mild import MildMap, NeutralProblem, Trajectory, picard_solve
from .noise import QfbmPath
from .spectral import SpectralField

__all__ = [
    "InputOperator",
    "ControlSignal",
    "ControlSystem",
    "SteeringReport",
    "apply_w",
    "gramian",
    "w_inverse",
    "control_for",
    "steer",
    "refined_terminal_error",
]


@dataclass(frozen=True, eq=False)
class InputOperator:
    """Diagonal B with per-mode gains; modes with gain 0 are uncontrolled."""

    gains: np.ndarray

    def __post_init__(self):
        g = np.array(self.gains, dtype=np.float64).reshape(-1)
        g.setflags(write=False)
        object.__setattr__(self, "gains", g)

    @classmethod
    def first_modes(cls, n_modes: int, n_controlled: int, gain: float = 1.0) -> "InputOperator":
        g = np.zeros(n_modes)
        g[:n_controlled] = gain
        return cls(g)

    @property
    def controlled(self) -> np.ndarray:
        return np.flatnonzero(self.gains != 0.0)

    @property
    def M_b(self) -> float:
        return float(np.max(np.abs(self.gains)))


@dataclass(frozen=True, eq=False)
class ControlSignal:
    grid: TimeGrid
    values: np.ndarray
    multiplier: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != self.grid.points.size:
            raise GridError("control must have one row per grid point")
        if not np.all(np.isfinite(v)):
            raise ValueError("control has non-finite values")
        object.__setattr__(self, "values", v)

    @classmethod
    def zero(cls, grid: TimeGrid, n_modes: int) -> "ControlSignal":
        return cls(grid, np.zeros((grid.points.size, n_modes)), np.zeros(n_modes))

    @property
    def energy(self) -> float:
        """Trapezoid approximation of int_0^T ||u(s)||^2 ds."""
        return float(self.grid.trapezoid_weights() @ np.sum(self.values**2, axis=1))

    def __add__(self, other):
        if other.grid != self.grid:
            raise GridError("controls live on different grids")
        m = None if self.multiplier is None or other.multiplier is None else self.multiplier + other.multiplier
        return ControlSignal(self.grid, self.values + other.values, m)


class ControlSystem:
    """Input operator, horizon, target and the Gramian-based inverse of W on one grid."""

    def __init__(self, problem_or_family, grid: TimeGrid, target, input_op: InputOperator | None = None,
                 gramian_floor: float = 1e-12):
        if isinstance(problem_or_family, NeutralProblem):
            family = problem_or_family.family
            if input_op is None:
                input_op = InputOperator(problem_or_family.input_gains)
        else:
            family = problem_or_family
        if input_op is None:
            input_op = InputOperator(np.ones(family.n_modes))
        N = family.n_modes
        if input_op.gains.size != N:
            raise ValueError("input operator has the wrong number of modes")
        if input_op.controlled.size == 0:
            raise GramianConditionError("no controlled modes", 0)
        self.family = family
        self.grid = grid
        self.input = input_op
        self.target = SpectralField(target.coefficients if isinstance(target, SpectralField) else target)
        if self.target.n_modes != N:
            raise ValueError("target has the wrong number of modes")
        self.gramian_floor = float(gramian_floor)
        self.weights = grid.trapezoid_weights()
        self.Phi = family.propagator(grid).terminal_matrices()
        bb = self.input.gains**2
        full = np.einsum("j,jab,b,jcb->ac", self.weights, self.Phi, bb, self.Phi)
        self.full_gramian = 0.5 * (full + full.T)
        C = self.input.controlled
        self.controlled = C
        G = self.full_gramian[np.ix_(C, C)]
        self._check_conditioning(G)
        self._gramian = G
        self._cho = linalg.cho_factor(G, lower=True)
        eig = np.linalg.eigvalsh(G)
        self.lambda_min = float(eig[0])
        self.M_w = 1.0 / math.sqrt(self.lambda_min)

    def _check_conditioning(self, G):
        C = self.controlled
        d = np.diag(G)
        if np.any(d <= 0):
            bad = int(C[np.argmin(d)]) + 1
            raise GramianConditionError(f"Gramian has a nonpositive diagonal entry at mode {bad}", bad)
        vals, vecs = np.linalg.eigh(G)
        if vals[0] < self.gramian_floor:
            bad = int(C[np.argmax(np.abs(vecs[:, 0]))]) + 1
            raise GramianConditionError(
                f"Gramian smallest eigenvalue {vals[0]:.3g} below floor {self.gramian_floor:.3g}; "
                f"mode {bad} is numerically uncontrollable",
                bad,
            )
        # scaling removes per-mode magnitude so near-collinear columns are caught too
        D = 1.0 / np.sqrt(d)
        vals, vecs = np.linalg.eigh(G * np.outer(D, D))
        if vals[0] < self.gramian_floor:
            bad = int(C[np.argmax(np.abs(vecs[:, 0]))]) + 1
            raise GramianConditionError(
                f"scaled Gramian smallest eigenvalue {vals[0]:.3g} below floor {self.gramian_floor:.3g}; "
                f"mode {bad} is numerically uncontrollable",
                bad,
            )

    @property
    def horizon(self) -> float:
        return self.grid.horizon

    @property
    def M_b(self) -> float:
        return self.input.M_b

    @property
    def gramian(self) -> np.ndarray:
        return self._gramian.copy()

    def solve_multiplier(self, y) -> np.ndarray:
        """eta in X with eta_C = Gamma^{-1} y_C and zero off the controlled modes."""
        y = np.asarray(getattr(y, "coefficients", y), dtype=np.float64)
        eta = np.zeros(self.family.n_modes)
        eta[self.controlled] = linalg.cho_solve(self._cho, y[self.controlled])
        return eta

    def evaluate_control(self, eta, grid: TimeGrid | None = None) -> ControlSignal:
        """u(s) = B* U(T, s)* eta sampled on ``grid`` (default: the system grid)."""
        eta = np.asarray(eta, dtype=np.float64)
        if grid is None or grid == self.grid:
            Phi, grid = self.Phi, self.grid
        else:
            if abs(grid.horizon - self.horizon) > 1e-12:
                raise GridError("resampling grid has a different horizon")
            Phi = self.family.propagator(grid).terminal_matrices()
        u = self.input.gains * np.einsum("jab,a->jb", Phi, eta)
        return ControlSignal(grid, u, eta.copy())


def apply_w(system: ControlSystem, u) -> SpectralField:
    """W u by the trapezoid rule on the system grid."""
    vals = np.asarray(getattr(u, "values", u), dtype=np.float64)
    if vals.shape != (system.grid.points.size, system.family.n_modes):
        raise GridError("control is not sampled on the system grid")
    if isinstance(u, ControlSignal) and u.grid != system.grid:
        raise GridError("control is not sampled on the system grid")
    Bu = system.input.gains * vals
    return SpectralField(np.einsum("j,jab,jb->a", system.weights, system.Phi, Bu))


def gramian(system: ControlSystem) -> np.ndarray:
    return system.gramian


def w_inverse(system: ControlSystem, y) -> ControlSignal:
    """Minimum-energy control with W u = y on the controlled modes."""
    return system.evaluate_control(system.solve_multiplier(y))


def _free_terminal(m: MildMap, X) -> np.ndarray:
    """psi(x)(T) with the control term removed."""
    return m.window(X, 0, X.shape[0] - 1, include_control=False)[-1]


def control_for(system: ControlSystem, traj: Trajectory, noise: QfbmPath | None, problem: NeutralProblem,
                mild_map: MildMap | None = None) -> ControlSignal:
    """u = W^{-1}{x_1 - [every non-control term of the mild formula at T, evaluated on traj]}."""
    if traj.grid != system.grid:
        raise GridError("trajectory and control system use different grids")
    m = mild_map if mild_map is not None else MildMap(problem, system.grid, None, noise)
    X = np.array(traj.values)
    X[0] = m.initial_state()
    residual = system.target.coefficients - _free_terminal(m, X)
    return w_inverse(system, residual)


@dataclass
class SteeringReport:
    target_norm: float
    terminal_errors: list = field(default_factory=list)
    state_residuals: list = field(default_factory=list)
    inner_iterations: list = field(default_factory=list)
    control_energy: float = 0.0
    converged: bool = False

    @property
    def outer_iterations(self) -> int:
        return len(self.terminal_errors)

    @property
    def terminal_error(self) -> float:
        return self.terminal_errors[-1] if self.terminal_errors else math.inf

    @property
    def relative_terminal_error(self) -> float:
        return self.terminal_error / self.target_norm if self.target_norm > 0 else self.terminal_error

    def as_dict(self) -> dict:
        return {
            "target_norm": self.target_norm,
            "terminal_error": self.terminal_error,
            "relative_terminal_error": self.relative_terminal_error,
            "control_energy": self.control_energy,
            "outer_iterations": self.outer_iterations,
            "inner_iterations": list(self.inner_iterations),
            "state_residuals": list(self.state_residuals),
            "terminal_errors": list(self.terminal_errors),
            "converged": self.converged,
        }


def steer(problem: NeutralProblem, system: ControlSystem, noise: QfbmPath | None = None,
          tol: float = 1e-9, max_outer: int = 60, picard_tol: float | None = None, max_iter: int = 200):
    """Alternate u <- control_for(x) and x <- picard_solve(u) until x is a fixed point and x(T) = x_1.

    Convergence requires both the sup-norm change of the state and the terminal
    miss ||x(T) - x_1|| to drop below ``tol`` (scaled by max(1, ||x_1||)).
    Returns (Trajectory, ControlSignal, SteeringReport).
    """
    grid = system.grid
    picard_tol = tol * 1e-2 if picard_tol is None else picard_tol
    m = MildMap(problem, grid, None, noise)
    X = m.prop.from_index(0, m.initial_state())
    traj = Trajectory(grid, X, problem.history)
    target = system.target.coefficients
    scale = max(1.0, float(np.linalg.norm(target)))
    report = SteeringReport(float(np.linalg.norm(target)))
    u = None
    for _ in range(max_outer):
        u = control_for(system, traj, noise, problem, m)
        m.Bu = problem.input_gains * u.values
        new, prep = picard_solve(problem, grid, tol=picard_tol, max_iter=max_iter, initial=traj, mild_map=m)
        state_res = float(np.max(np.linalg.norm(new.values - traj.values, axis=1)))
        term_err = float(np.linalg.norm(new.values[-1] - target))
        traj = new
        report.state_residuals.append(state_res)
        report.terminal_errors.append(term_err)
        report.inner_iterations.append(prep.iterations)
        if state_res < tol * scale and term_err < tol * scale:
            report.converged = True
            break
    report.control_energy = u.energy
    if not report.converged:
        raise SteeringDivergenceError(
            f"steering did not converge in {max_outer} outer iterations "
            f"(terminal error {report.terminal_error:.3g})",
            report.terminal_errors,
        )
    return traj, u, report


def refined_terminal_error(problem: NeutralProblem, system: ControlSystem, control: ControlSignal,
                           fine_noise: QfbmPath | None, tol: float = 1e-11, fine_grid: TimeGrid | None = None) -> float:
    """Relative miss ||x(T) - x_1|| / ||x_1|| (absolute if x_1 = 0) when the control is replayed on a finer grid.

    The control formula is evaluated exactly on the fine grid and the state is
    re-solved there, so the miss measures the quadrature error of the coarse
    solve rather than the (round-off level) discrete steering error.
    """
    if control.multiplier is None:
        raise ValueError("control has no multiplier to resample from")
    grid = fine_noise.grid if fine_noise is not None else fine_grid
    u = system.evaluate_control(control.multiplier, grid)
    traj, _ = picard_solve(problem, grid, u, fine_noise, tol=tol)
    target = system.target.coefficients
    miss = float(np.linalg.norm(traj.values[-1] - target))
    norm = float(np.linalg.norm(target))
    return miss / norm if norm > 0 else miss
