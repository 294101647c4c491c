"""Mild solutions of the neutral delay equation

    d[x(t) + g(t, x(t - r(t)))] = [A(t) x(t) + f(t, x(t - rho(t))) + B u(t)] dt + sigma(t) dB^H(t),
    x(t) = phi(t) on [-tau, 0],

computed pathwise as fixed points of the variation-of-constants map psi.
Deterministic integrals use the composite trapezoid rule on the grid,
stochastic ones left-point sums.  The A(s) U(t, s) g term is evaluated as
U(t, s)[A(s) g], which is exact when U and A(s) commute (spatially constant b).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError, GridError, HypothesisError, PicardDivergenceError
from .evolution import EvolutionFamily
from .fbm import TimeGrid
from .noise import CovarianceOperator, NoiseCoefficient, QfbmPath
from .spectral import SpectralField, basis

__all__ = [
    "Nonlinearity",
    "ZeroMap",
    "LinearMap",
    "ScaledSineMap",
    "NONLINEARITIES",
    "make_nonlinearity",
    "DelayFunctions",
    "HistorySegment",
    "NeutralProblem",
    "Trajectory",
    "MildMap",
    "PicardReport",
    "history_lookup",
    "apply_psi",
    "picard_solve",
    "contraction_constant",
    "contraction_windows",
]

H3_LIMIT = 1.0 / math.sqrt(6.0)


# --------------------------------------------------------------------------
# nonlinearities
# --------------------------------------------------------------------------
class Nonlinearity:
    """A map (t, x) -> X acting on coefficient arrays of shape (..., N).

    ``lipschitz`` bounds ||h(t,x) - h(t,y)|| / ||x - y|| and ``growth`` is the
    constant in ||h(t,x)||^2 <= growth (1 + ||x||^2).
    """

    name = "abstract"
    c = 0.0

    def __call__(self, t, x):
        raise NotImplementedError

    @property
    def lipschitz(self) -> float:
        return abs(self.c)

    @property
    def growth(self) -> float:
        return self.c**2

    @property
    def is_zero(self) -> bool:
        return self.c == 0.0

    def to_dict(self) -> dict:
        return {"name": self.name, "c": self.c}


class ZeroMap(Nonlinearity):
    name = "zero"

    def __call__(self, t, x):
        return np.zeros_like(np.asarray(x, dtype=np.float64))

    def to_dict(self):
        return {"name": "zero"}


class LinearMap(Nonlinearity):
    """h(t, x) = c x."""

    name = "linear"

    def __init__(self, c: float):
        self.c = float(c)

    def __call__(self, t, x):
        return self.c * np.asarray(x, dtype=np.float64)


class ScaledSineMap(Nonlinearity):
    """Substitution operator h(t, x)(z) = c sin(x(z)), applied on the collocation nodes."""

    name = "scaled-sine"

    def __init__(self, c: float):
        self.c = float(c)

    def __call__(self, t, x):
        x = np.asarray(x, dtype=np.float64)
        b = basis(x.shape[-1])
        return self.c * b.from_nodal(np.sin(b.to_nodal(x)))


NONLINEARITIES = {"zero": ZeroMap, "linear": LinearMap, "scaled-sine": ScaledSineMap}


def make_nonlinearity(spec) -> Nonlinearity:
    if isinstance(spec, Nonlinearity):
        return spec
    name = spec.get("name")
    if name not in NONLINEARITIES:
        raise ValueError(f"unknown nonlinearity {name!r}; choose from {sorted(NONLINEARITIES)}")
    if name == "zero":
        return ZeroMap()
    return NONLINEARITIES[name](float(spec.get("c", 0.0)))


# --------------------------------------------------------------------------
# delays and history
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class DelayFunctions:
    """Delays r (neutral term) and rho (drift term), both with values in [0, tau]."""

    r: Callable[[float], float]
    rho: Callable[[float], float]
    tau: float
    r_label: str = "custom"
    rho_label: str = "custom"

    def __post_init__(self):
        if not self.tau > 0:
            raise DomainError("maximal delay tau must be positive")

    @classmethod
    def constant(cls, r: float, rho: float, tau: float) -> "DelayFunctions":
        r, rho = float(r), float(rho)
        return cls(lambda t: r, lambda t: rho, tau, f"constant({r})", f"constant({rho})")

    def check(self, times) -> None:
        for name, fn in (("r", self.r), ("rho", self.rho)):
            vals = np.array([fn(float(t)) for t in times])
            if np.any(vals < 0) or np.any(vals > self.tau + 1e-14):
                raise DomainError(f"delay {name}(t) leaves [0, tau = {self.tau}]")


class HistorySegment:
    """phi on [-tau, 0], stored on a uniform grid and linearly interpolated."""

    def __init__(self, times, values):
        times = np.asarray(times, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        if times.ndim != 1 or times.size < 2 or values.shape[0] != times.size:
            raise GridError("history needs at least two time points and matching values")
        if times[-1] != 0.0 or np.any(np.diff(times) <= 0):
            raise GridError("history grid must increase to 0")
        if not np.all(np.isfinite(values)):
            raise DomainError("history values must be finite")
        self.times = times
        self.values = values
        self.tau = -float(times[0])

    @classmethod
    def from_function(cls, fn, tau: float, n_points: int = 41) -> "HistorySegment":
        ts = np.linspace(-tau, 0.0, n_points)
        return cls(ts, np.stack([np.asarray(fn(t), dtype=np.float64) for t in ts]))

    @classmethod
    def linear(cls, constant, slope, tau: float, n_modes: int, n_points: int = 41) -> "HistorySegment":
        """phi(t) = constant + t * slope (coefficient vectors, zero-padded to N modes)."""
        c = _pad(constant, n_modes)
        s = _pad(slope, n_modes)
        return cls.from_function(lambda t: c + t * s, tau, n_points)

    @classmethod
    def zero(cls, tau: float, n_modes: int) -> "HistorySegment":
        return cls(np.array([-tau, 0.0]), np.zeros((2, n_modes)))

    @property
    def n_modes(self) -> int:
        return self.values.shape[1]

    def eval(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
        if np.any(ts < self.times[0] - 1e-14) or np.any(ts > 1e-14):
            raise DomainError(f"history is defined on [{self.times[0]}, 0]")
        ts = np.clip(ts, self.times[0], 0.0)
        idx = np.clip(np.searchsorted(self.times, ts, side="right") - 1, 0, self.times.size - 2)
        t0, t1 = self.times[idx], self.times[idx + 1]
        w = ((ts - t0) / (t1 - t0))[:, None]
        return (1.0 - w) * self.values[idx] + w * self.values[idx + 1]

    def __call__(self, t: float) -> np.ndarray:
        return self.eval([t])[0]

    @property
    def initial(self) -> np.ndarray:
        return self.values[-1].copy()


def _pad(v, n):
    out = np.zeros(n)
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    out[: min(n, v.size)] = v[:n]
    return out


# --------------------------------------------------------------------------
# problem and trajectories
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class ProblemConstants:
    C1: float
    C2: float
    L_star: float
    M_star: float
    L: float
    M: float
    beta: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(eq=False)
class NeutralProblem:
    family: EvolutionFamily
    f: Nonlinearity
    g: Nonlinearity
    sigma: NoiseCoefficient
    q: CovarianceOperator
    delays: DelayFunctions
    history: HistorySegment
    input_gains: np.ndarray = None
    constants: ProblemConstants = None

    def __post_init__(self):
        N = self.family.n_modes
        if self.input_gains is None:
            self.input_gains = np.ones(N)
        self.input_gains = np.asarray(self.input_gains, dtype=np.float64)
        if self.input_gains.shape != (N,):
            raise ValueError("input gains need one entry per mode")
        if self.q.n_modes != N or self.sigma.n_modes != N or self.history.n_modes != N:
            raise ValueError("mode counts of family, Q, sigma and history disagree")
        if self.history.tau + 1e-14 < self.delays.tau:
            raise DomainError("history segment is shorter than the maximal delay")
        if self.constants is None:
            self.constants = self.derive_constants()
        c = self.constants
        if any(v < 0 for v in c.as_dict().values()):
            raise HypothesisError("H.2", "problem constants must be nonnegative")
        if not c.L_star * c.M_star < H3_LIMIT:
            raise HypothesisError(
                "H.3", f"L*M* = {c.L_star * c.M_star:.6g} must be below 1/sqrt(6) = {H3_LIMIT:.6g}"
            )

    def derive_constants(self) -> ProblemConstants:
        gen = self.family.generator
        a_norm = gen.operator_norm_bound()
        return ProblemConstants(
            C1=max(self.f.lipschitz, self.g.lipschitz),
            C2=max(self.f.growth, self.g.growth * max(1.0, a_norm) ** 2),
            L_star=a_norm * self.g.lipschitz,
            M_star=gen.inverse_norm_bound(),
            L=self.sigma.bound,
            M=self.family.M,
            beta=self.family.beta,
        )

    @property
    def n_modes(self) -> int:
        return self.family.n_modes

    @property
    def tau(self) -> float:
        return self.delays.tau


@dataclass(frozen=True, eq=False)
class Trajectory:
    """x on [-tau, T]: history for t <= 0, grid values (linearly interpolated) for t > 0."""

    grid: TimeGrid
    values: np.ndarray
    history: HistorySegment

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.grid.points.size, self.history.n_modes):
            raise GridError("trajectory values must have shape (K+1, N)")
        object.__setattr__(self, "values", v)

    @property
    def terminal(self) -> SpectralField:
        return SpectralField(self.values[-1])

    def at(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
        if np.any(ts < -self.history.tau - 1e-14):
            raise DomainError(f"trajectory starts at -tau = {-self.history.tau}")
        if np.any(ts > self.grid.horizon + 1e-12):
            raise DomainError("time beyond the horizon")
        out = np.empty((ts.size, self.values.shape[1]))
        neg = ts <= 0.0
        if np.any(neg):
            out[neg] = self.history.eval(ts[neg])
        if np.any(~neg):
            pts = self.grid.points
            tp = ts[~neg]
            idx = np.clip(np.searchsorted(pts, tp, side="right") - 1, 0, pts.size - 2)
            w = ((tp - pts[idx]) / (pts[idx + 1] - pts[idx]))[:, None]
            out[~neg] = (1.0 - w) * self.values[idx] + w * self.values[idx + 1]
        return out


def history_lookup(traj: Trajectory, t: float) -> SpectralField:
    return SpectralField(traj.at([t])[0])


class _DelayedArgument:
    """Linear-interpolation weights for x(t_k - d(t_k)) on a fixed grid and history."""

    def __init__(self, grid: TimeGrid, history: HistorySegment, delay: Callable, tau: float):
        t = grid.points
        d = np.array([delay(float(s)) for s in t])
        if np.any(d < 0) or np.any(d > tau + 1e-14):
            raise DomainError(f"delay leaves [0, tau = {tau}] on the grid")
        pos = t - d
        if np.any(pos < -history.tau - 1e-14):
            raise DomainError("delayed argument falls before -tau")
        self.past = pos <= 0.0
        self.hist_values = history.eval(pos[self.past]) if np.any(self.past) else np.zeros((0, history.n_modes))
        # at pos == 0 history and grid agree (x(0) = phi(0)); history is used
        pp = np.where(self.past, t[1], pos)
        idx = np.clip(np.searchsorted(t, pp, side="right") - 1, 0, t.size - 2)
        self.lo = idx
        self.w = ((pp - t[idx]) / (t[idx + 1] - t[idx]))[:, None]
        self.hist_index = np.cumsum(self.past) - 1

    def eval(self, X, rows: slice) -> np.ndarray:
        lo, w = self.lo[rows], self.w[rows]
        out = (1.0 - w) * X[lo] + w * X[lo + 1]
        past = self.past[rows]
        if np.any(past):
            out[past] = self.hist_values[self.hist_index[rows][past]]
        return out


class MildMap:
    """The map psi on a fixed grid, for a fixed control signal and noise path.

    ``control`` is U-valued, sampled on the grid (shape (K+1, N)); the input
    operator is the problem's diagonal ``input_gains``.
    """

    def __init__(self, problem: NeutralProblem, grid: TimeGrid, control=None, noise: QfbmPath | None = None):
        self.problem = problem
        self.grid = grid
        N = problem.n_modes
        K1 = grid.points.size
        self.prop = problem.family.propagator(grid)
        self.gen = problem.family.generator
        problem.delays.check(grid.points)
        self.r_arg = _DelayedArgument(grid, problem.history, problem.delays.r, problem.tau)
        self.rho_arg = _DelayedArgument(grid, problem.history, problem.delays.rho, problem.tau)
        if control is None:
            self.Bu = np.zeros((K1, N))
        else:
            u = getattr(control, "values", control)
            u = np.asarray(u, dtype=np.float64)
            if u.shape != (K1, N):
                raise GridError("control is not sampled on the solver grid")
            self.Bu = problem.input_gains * u
        if noise is not None and noise.grid != grid:
            raise GridError("noise path and solver grid differ")
        if noise is not None and noise.n_modes != N:
            raise GridError("noise path has the wrong number of modes")
        self.noise = noise
        self._stoch_cache: dict[tuple[int, int], np.ndarray] = {}
        self._g_zero = problem.g.is_zero
        self._f_zero = problem.f.is_zero

    def initial_state(self) -> np.ndarray:
        return self.problem.history.initial

    def stochastic_term(self, k0: int, k1: int) -> np.ndarray:
        key = (k0, k1)
        if key not in self._stoch_cache:
            if self.noise is None or self.problem.sigma.bound == 0.0:
                z = np.zeros((k1 - k0 + 1, self.problem.n_modes))
            else:
                S = self.problem.sigma(self.grid.points)
                z = self.prop.left(S, self.noise.increments, k0, k1)
            self._stoch_cache[key] = z
        return self._stoch_cache[key]

    def window(self, X, k0: int, k1: int, include_control: bool = True) -> np.ndarray:
        """psi(x) at grid rows k0..k1, restarting the variation-of-constants formula at t_{k0}.

        Rows of X before k0 are treated as already solved; rows inside the
        window are the current iterate.
        """
        t = self.grid.points
        rows = slice(k0, k1 + 1)
        h = self.Bu[rows].copy() if include_control else np.zeros((k1 - k0 + 1, X.shape[1]))
        if self._g_zero:
            G = np.zeros_like(h)
        else:
            G = self.problem.g(t[rows], self.r_arg.eval(X, rows))
            h -= self.gen.apply_grid(t[rows], G)
        if not self._f_zero:
            h += self.problem.f(t[rows], self.rho_arg.eval(X, rows))
        out = self.prop.from_index(k0, X[k0] + G[0], k1)
        out -= G
        out += self.prop.trapz(_embed(h, k0, X.shape[0]), k0, k1)
        out += self.stochastic_term(k0, k1)
        out[0] = X[k0]  # exact at the restart point; avoids (x + G) - G round-off
        return out

    def apply(self, X, include_control: bool = True) -> np.ndarray:
        X = np.array(X, dtype=np.float64)
        X[0] = self.initial_state()
        return self.window(X, 0, X.shape[0] - 1, include_control)


def _embed(h, k0, K1):
    if k0 == 0 and h.shape[0] == K1:
        return h
    out = np.zeros((K1, h.shape[1]))
    out[k0 : k0 + h.shape[0]] = h
    return out


def apply_psi(traj: Trajectory, problem: NeutralProblem, control=None, noise: QfbmPath | None = None) -> Trajectory:
    """One application of psi to a trajectory (grid given by ``traj``)."""
    if noise is not None and noise.grid != traj.grid:
        raise GridError("noise path and trajectory grid differ")
    m = MildMap(problem, traj.grid, control, noise)
    return Trajectory(traj.grid, m.apply(traj.values), problem.history)


# --------------------------------------------------------------------------
# contraction constant and Picard iteration
# --------------------------------------------------------------------------
def contraction_constant(problem: NeutralProblem, t: float, system=None) -> float:
    """gamma(t) bounding sup E||psi(x) - psi(y)||^2 by gamma(t) sup E||x - y||^2.

    Without ``system`` the control is held fixed and its block is omitted;
    with a ControlSystem the feedback of x into the control through W^{-1} is
    included (horizon, M_b and M_w taken from the system).
    """
    c = problem.constants
    M2, b = c.M**2, c.beta
    decay = t * (1.0 - math.exp(-2.0 * b * t)) / (2.0 * b) if t > 0 else 0.0
    total = c.L_star**2 * c.M_star**2 + M2 * c.L_star**2 * decay + M2 * c.C1**2 * decay
    if system is not None:
        T = system.horizon
        total += t * M2 * system.M_b**2 * system.M_w**2 * (
            c.C1**2 + c.L_star**2 * M2 * T**2 + T**2 * M2 * c.C1**2
        )
    return 6.0 * total


def contraction_windows(problem: NeutralProblem, grid: TimeGrid, target: float = 0.9, system=None):
    """Split the grid into windows [k0, k1] on which gamma(t_{k1} - t_{k0}) <= target.

    If gamma(0) already exceeds ``target`` the midpoint (1 + gamma(0)) / 2 is used instead.
    Returns (windows, T1, gamma(T1)).
    """
    g0 = contraction_constant(problem, 0.0, system)
    if g0 >= 1.0:
        raise HypothesisError("H.3", f"gamma(0) = {g0:.6g} >= 1, psi is not a contraction")
    if g0 >= target:
        target = 0.5 * (1.0 + g0)
    T = grid.horizon
    if contraction_constant(problem, T, system) <= target:
        T1 = T
    else:
        lo, hi = 0.0, T
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if contraction_constant(problem, mid, system) <= target:
                lo = mid
            else:
                hi = mid
        T1 = lo
    pts = grid.points
    windows = []
    k0 = 0
    K = pts.size - 1
    while k0 < K:
        k1 = int(np.searchsorted(pts, pts[k0] + T1 * (1 + 1e-12), side="right") - 1)
        k1 = min(max(k1, k0 + 1), K)
        windows.append((k0, k1))
        k0 = k1
    return windows, T1, contraction_constant(problem, T1, system)


@dataclass
class WindowReport:
    k0: int
    k1: int
    length: float
    gamma: float
    residuals: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.residuals)

    def squared_ratios(self) -> list:
        r = self.residuals
        return [(r[i + 1] / r[i]) ** 2 for i in range(len(r) - 1) if r[i] > 0]


@dataclass
class PicardReport:
    windows: list
    T1: float
    gamma_T1: float
    tol: float
    converged: bool = True

    @property
    def iterations(self) -> int:
        return sum(w.iterations for w in self.windows)

    def as_dict(self) -> dict:
        return {
            "T1": self.T1,
            "gamma_T1": self.gamma_T1,
            "tol": self.tol,
            "converged": self.converged,
            "iterations": self.iterations,
            "windows": [
                {"k0": w.k0, "k1": w.k1, "gamma": w.gamma, "iterations": w.iterations,
                 "final_residual": w.residuals[-1] if w.residuals else 0.0}
                for w in self.windows
            ],
        }


def picard_solve(problem: NeutralProblem, grid: TimeGrid, control=None, noise: QfbmPath | None = None,
                 tol: float = 1e-11, max_iter: int = 200, initial=None, target: float = 0.9,
                 mild_map: MildMap | None = None):
    """Pathwise Picard iteration x <- psi(x) from x0(t) = U(t, 0) phi(0).

    The horizon is cut into windows where the contraction constant stays below
    ``target``; each window is iterated to ``tol`` (sup over its grid points of
    the coefficient-norm change) before the next one starts.

    Returns (Trajectory, PicardReport).  Raises PicardDivergenceError with the
    residual history when a window does not converge within ``max_iter`` sweeps.
    """
    m = mild_map if mild_map is not None else MildMap(problem, grid, control, noise)
    windows, T1, gT1 = contraction_windows(problem, grid, target)
    K1 = grid.points.size
    X = np.zeros((K1, problem.n_modes))
    X[0] = m.initial_state()
    if initial is not None:
        init = np.asarray(getattr(initial, "values", initial), dtype=np.float64)
        X[1:] = init[1:]
    report = PicardReport([], T1, gT1, tol)
    pts = grid.points
    for k0, k1 in windows:
        if initial is None:
            X[k0 + 1 : k1 + 1] = m.prop.from_index(k0, X[k0], k1)[1:]
        wr = WindowReport(k0, k1, float(pts[k1] - pts[k0]),
                          contraction_constant(problem, float(pts[k1] - pts[k0])))
        report.windows.append(wr)
        for _ in range(max_iter):
            new = m.window(X, k0, k1)
            res = float(np.max(np.linalg.norm(new - X[k0 : k1 + 1], axis=1)))
            X[k0 : k1 + 1] = new
            wr.residuals.append(res)
            if res < tol or not math.isfinite(res):
                break
        if not wr.residuals[-1] < tol:
            report.converged = False
            raise PicardDivergenceError(
                f"Picard iteration on window [{pts[k0]:.4g}, {pts[k1]:.4g}] stalled at residual "
                f"{wr.residuals[-1]:.3g} after {wr.iterations} sweeps",
                wr.residuals,
            )
    return Trajectory(grid, X, problem.history), report
