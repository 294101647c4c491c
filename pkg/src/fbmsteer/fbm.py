"""Scalar fractional Brownian motion.

Covariance, the Volterra kernel K_H of the Wiener-integral representation,
exact Gaussian sampling on a grid (Cholesky), and a kernel-representation
sampler used only as a distributional cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.special import gammaln

from .errors import DomainError, FactorizationError, GridError, QuadratureError
from .rng import STREAM_FBM, STREAM_KERNEL_REP, substream

__all__ = [
    "HurstParameter",
    "TimeGrid",
    "FbmPath",
    "covariance",
    "beta_function",
    "kernel_constant",
    "kernel",
    "covariance_matrix",
    "cholesky_factor",
    "sample_matrix",
    "sample_paths",
    "representation_matrix",
    "kernel_representation_matrix",
    "kernel_representation_sample",
]

KERNEL_TOL = 1e-10


@dataclass(frozen=True)
class HurstParameter:
    value: float

    def __post_init__(self):
        v = float(self.value)
        if not (0.0 < v < 1.0) or not math.isfinite(v):
            raise DomainError(f"Hurst parameter must lie in (0, 1), got {self.value!r}")
        object.__setattr__(self, "value", v)

    def require_long_memory(self) -> "HurstParameter":
        """Model operations need H > 1/2."""
        if self.value <= 0.5:
            raise DomainError(f"operation requires H > 1/2, got H = {self.value}")
        return self

    def __float__(self):
        return self.value


def _hurst(h) -> HurstParameter:
    return h if isinstance(h, HurstParameter) else HurstParameter(h)


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing time points t_0 = 0 < ... < t_K = T."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 1 or pts.size < 2:
            raise GridError("a time grid needs at least two points (K >= 1)")
        if pts[0] != 0.0:
            raise GridError(f"grid must start at 0, got {pts[0]}")
        if not np.all(np.isfinite(pts)) or np.any(np.diff(pts) <= 0.0):
            raise GridError("grid points must be finite and strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, horizon: float, steps: int) -> "TimeGrid":
        if steps < 1:
            raise GridError("need at least one step")
        if not horizon > 0:
            raise GridError("horizon must be positive")
        return cls(np.linspace(0.0, float(horizon), int(steps) + 1))

    @property
    def horizon(self) -> float:
        return float(self.points[-1])

    @property
    def n_steps(self) -> int:
        return self.points.size - 1

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.points)

    @property
    def is_uniform(self) -> bool:
        d = self.steps
        return bool(np.allclose(d, d[0], rtol=1e-12, atol=0.0))

    def trapezoid_weights(self) -> np.ndarray:
        d = self.steps
        w = np.zeros(self.points.size)
        w[:-1] += 0.5 * d
        w[1:] += 0.5 * d
        return w

    def index_of(self, t: float) -> int:
        """Index of an exact grid point; anything else is an error."""
        k = int(np.searchsorted(self.points, t))
        tol = 1e-12 * max(1.0, self.horizon)
        for j in (k - 1, k):
            if 0 <= j < self.points.size and abs(self.points[j] - t) <= tol:
                return j
        raise GridError(f"t = {t!r} is not a grid point")

    def restrict(self, stride: int) -> "TimeGrid":
        if stride < 1 or self.n_steps % stride:
            raise GridError(f"stride {stride} does not divide {self.n_steps} steps")
        return TimeGrid(self.points[::stride])

    def refine(self, factor: int) -> "TimeGrid":
        if factor < 1:
            raise GridError("refinement factor must be >= 1")
        pts = self.points
        sub = [pts[:-1] + (pts[1:] - pts[:-1]) * (i / factor) for i in range(factor)]
        fine = np.empty(self.n_steps * factor + 1)
        fine[:-1] = np.stack(sub, axis=1).ravel()
        fine[-1] = pts[-1]
        return TimeGrid(fine)

    def key(self):
        return self.points.tobytes()

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash(self.key())


@dataclass(frozen=True, eq=False)
class FbmPath:
    grid: TimeGrid
    values: np.ndarray
    hurst: HurstParameter
    seed: int
    jitter: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != self.grid.points.shape:
            raise GridError("path values do not match the grid")
        if vals[0] != 0.0:
            raise DomainError("fBm paths start at 0")
        if not np.all(np.isfinite(vals)):
            raise DomainError("non-finite path values")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "hurst", _hurst(self.hurst))

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values)


def covariance(h, s, t):
    """E[B^H(s) B^H(t)] = (t^{2H} + s^{2H} - |t-s|^{2H}) / 2."""
    H = _hurst(h).value
    s = np.asarray(s, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if np.any(s < 0) or np.any(t < 0):
        raise DomainError("covariance is defined here for s, t >= 0")
    two_h = 2.0 * H
    out = 0.5 * (t**two_h + s**two_h - np.abs(t - s) ** two_h)
    return float(out) if out.ndim == 0 else out


def beta_function(a: float, b: float) -> float:
    return math.exp(gammaln(a) + gammaln(b) - gammaln(a + b))


def kernel_constant(h) -> float:
    """c_H = sqrt(H(2H-1) / Beta(2-2H, H-1/2))."""
    H = _hurst(h).require_long_memory().value
    return math.sqrt(H * (2.0 * H - 1.0) / beta_function(2.0 - 2.0 * H, H - 0.5))


def kernel(h, t: float, s: float) -> float:
    """Volterra kernel K_H(t, s) of the representation B^H(t) = int K_H(t,s) dB(s).

    The endpoint singularity (u - s)^{H-3/2} is handled by an algebraic-weight
    adaptive rule (QUADPACK QAWS), so the remaining integrand u^{H-1/2} is smooth.
    """
    H = _hurst(h).require_long_memory().value
    if s <= 0:
        raise DomainError(f"kernel requires s > 0, got s = {s}")
    if t <= s:
        return 0.0
    res = integrate.quad(
        lambda u: u ** (H - 0.5),
        s,
        t,
        weight="alg",
        wvar=(H - 1.5, 0.0),
        epsabs=KERNEL_TOL,
        epsrel=1e-12,
        limit=200,
        full_output=1,
    )
    if len(res) > 3:
        raise QuadratureError(f"K_H({t}, {s}) quadrature failed: {res[3]}")
    value, abserr = res[0], res[1]
    if not math.isfinite(value) or abserr > 10 * KERNEL_TOL:
        raise QuadratureError(f"K_H({t}, {s}) quadrature error estimate {abserr:.3g}")
    return kernel_constant(H) * s ** (0.5 - H) * value


def rowwise(A: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Rows A @ z_i computed one at a time.

    A batched product rounds differently depending on the batch size; going
    row by row keeps every path bit-identical however many are drawn together.
    """
    out = np.empty((Z.shape[0], A.shape[0]))
    for i in range(Z.shape[0]):
        out[i] = A @ Z[i]
    return out


def covariance_matrix(h, grid: TimeGrid) -> np.ndarray:
    """Gram matrix of the covariance on t_1..t_K (t_0 = 0 is excluded)."""
    t = grid.points[1:]
    return covariance(h, t[:, None], t[None, :])


@lru_cache(maxsize=64)
def _cholesky_cached(H: float, key: bytes):
    grid = TimeGrid(np.frombuffer(key, dtype=np.float64))
    C = covariance_matrix(H, grid)
    jitter = 0.0
    try:
        L = np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * float(np.max(np.diag(C)))
        try:
            L = np.linalg.cholesky(C + jitter * np.eye(C.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise FactorizationError(
                f"fBm covariance not factorizable on {grid.n_steps} points even with jitter {jitter:.3g}"
            ) from exc
    L.setflags(write=False)
    return L, jitter


def cholesky_factor(h, grid: TimeGrid):
    """Lower Cholesky factor of covariance_matrix and the diagonal jitter used (0 if none)."""
    return _cholesky_cached(_hurst(h).value, grid.key())


def sample_matrix(h, grid: TimeGrid, n_paths: int, seed: int, *, stream=STREAM_FBM, start=0):
    """Exact fBm samples as an (n_paths, K+1) array plus the jitter applied.

    Path i is driven by its own substream keyed by ``(stream, start + i)``, so
    the output does not depend on how many paths are requested at once.
    """
    L, jitter = cholesky_factor(h, grid)
    K = grid.n_steps
    z = np.empty((n_paths, K))
    for i in range(n_paths):
        z[i] = substream(seed, stream + (start + i,)).standard_normal(K)
    out = np.zeros((n_paths, K + 1))
    out[:, 1:] = rowwise(L, z)
    return out, jitter


def sample_paths(h, grid: TimeGrid, n_paths: int, seed: int) -> list[FbmPath]:
    hp = _hurst(h)
    values, jitter = sample_matrix(hp, grid, n_paths, seed)
    return [FbmPath(grid, v, hp, seed, jitter, {"path_index": i}) for i, v in enumerate(values)]


@lru_cache(maxsize=16)
def _representation_cached(H: float, key: bytes):
    pts = np.frombuffer(key, dtype=np.float64)
    mids = 0.5 * (pts[:-1] + pts[1:])
    K = pts.size - 1
    M = np.zeros((K + 1, K))
    for k in range(1, K + 1):
        for j in range(k):
            M[k, j] = kernel(H, pts[k], mids[j])
    M.setflags(write=False)
    return M


def representation_matrix(h, grid: TimeGrid) -> np.ndarray:
    """Matrix M with M[k, j] = K_H(t_k, midpoint_j) for j < k (zero otherwise)."""
    hp = _hurst(h).require_long_memory()
    if not grid.is_uniform:
        raise GridError("the kernel representation sampler needs a uniform grid")
    return _representation_cached(hp.value, grid.key())


def kernel_representation_matrix(h, grid: TimeGrid, n_paths: int, seed: int, *, increments=None):
    """(n_paths, K+1) samples of sum_j K_H(t_k, mid_j) dW_j.

    ``increments`` may supply the Brownian increments directly (shape
    (n_paths, K)); otherwise they are drawn from the kernel-representation
    substreams of ``seed``.
    """
    M = representation_matrix(h, grid)
    K = grid.n_steps
    if increments is None:
        dt = grid.steps
        increments = np.empty((n_paths, K))
        for i in range(n_paths):
            increments[i] = substream(seed, STREAM_KERNEL_REP + (i,)).standard_normal(K) * np.sqrt(dt)
    increments = np.asarray(increments, dtype=np.float64).reshape(-1, K)
    return rowwise(M, increments)


def kernel_representation_sample(h, grid: TimeGrid, seed: int, *, increments=None) -> FbmPath:
    hp = _hurst(h)
    inc = None if increments is None else np.asarray(increments, dtype=np.float64)[None, :]
    values = kernel_representation_matrix(hp, grid, 1, seed, increments=inc)[0]
    return FbmPath(grid, values, hp, seed, 0.0, {"method": "kernel-representation"})
