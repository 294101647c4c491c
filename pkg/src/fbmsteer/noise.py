"""Q-fractional Brownian motion in the sine eigenbasis and pathwise Wiener integrals.

B^H(t) = sum_n sqrt(lambda_n) beta_n^H(t) e_n with independent scalar fBms.
Integrands sigma(t) are diagonal in the same basis (per-mode multipliers),
and integrals are left-point Riemann-Stieltjes (Young) sums, valid for H > 1/2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError, GridError, HypothesisError
from .fbm import FbmPath, HurstParameter, TimeGrid, _hurst, cholesky_factor, rowwise
from .rng import STREAM_QFBM, substream
from .spectral import SpectralField

__all__ = [
    "CovarianceOperator",
    "QfbmPath",
    "NoiseCoefficient",
    "sample_qfbm",
    "sample_qfbm_batch",
    "hs_norm",
    "wiener_integral",
    "wiener_integral_grid",
    "stochastic_convolution",
    "stochastic_convolution_grid",
    "convolution_bound",
]


@dataclass(frozen=True, eq=False)
class CovarianceOperator:
    """Q e_n = lambda_n e_n, n = 1..N."""

    eigenvalues: np.ndarray
    rule: str = "explicit"

    def __post_init__(self):
        lam = np.array(self.eigenvalues, dtype=np.float64).reshape(-1)
        if lam.size < 1:
            raise ValueError("need at least one eigenvalue")
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise HypothesisError("trace-class", "covariance eigenvalues must be finite and nonnegative")
        lam.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)

    @classmethod
    def power(cls, n_modes: int, exponent: float, scale: float = 1.0) -> "CovarianceOperator":
        """lambda_n = scale * n^{-exponent}; the extension to all n is trace class only for exponent > 1."""
        if exponent <= 1.0:
            raise HypothesisError(
                "trace-class",
                f"lambda_n = n^(-{exponent}) is not summable; need exponent > 1",
            )
        if scale < 0:
            raise HypothesisError("trace-class", "scale must be nonnegative")
        n = np.arange(1, n_modes + 1, dtype=np.float64)
        return cls(scale * n ** (-float(exponent)), f"power({exponent}, scale={scale})")

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.size

    @property
    def trace(self) -> float:
        return float(self.eigenvalues.sum())


@dataclass(frozen=True, eq=False)
class QfbmPath:
    """One realization of Q-fBm; ``values[k, n-1]`` is sqrt(lambda_n) beta_n^H(t_k)."""

    grid: TimeGrid
    values: np.ndarray
    hurst: HurstParameter
    seed: int
    path_index: int = 0
    jitter: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != self.grid.points.size:
            raise GridError("Q-fBm values must have one row per grid point")
        if np.any(v[0] != 0.0):
            raise DomainError("Q-fBm starts at 0")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "hurst", _hurst(self.hurst))

    @classmethod
    def zero(cls, grid: TimeGrid, n_modes: int, hurst=0.75) -> "QfbmPath":
        return cls(grid, np.zeros((grid.points.size, n_modes)), _hurst(hurst), seed=0)

    @property
    def n_modes(self) -> int:
        return self.values.shape[1]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    @property
    def mode_paths(self) -> list[FbmPath]:
        return [FbmPath(self.grid, self.values[:, n], self.hurst, self.seed, self.jitter, {"mode": n + 1})
                for n in range(self.n_modes)]

    def at(self, t: float) -> SpectralField:
        return SpectralField(self.values[self.grid.index_of(t)])

    def restrict(self, stride: int) -> "QfbmPath":
        """The same realization observed on every ``stride``-th grid point."""
        return QfbmPath(self.grid.restrict(stride), self.values[::stride], self.hurst, self.seed,
                        self.path_index, self.jitter)


@dataclass(frozen=True)
class NoiseCoefficient:
    """sigma(t) as per-mode multipliers sigma_n(t), with sup_t ||sigma(t)||_{L_2^0} <= bound."""

    multipliers: Callable
    n_modes: int
    bound: float
    label: str = "custom"

    def __call__(self, t):
        """Multipliers at time(s) t: shape (N,) for scalar t, (len(t), N) for arrays."""
        t_arr = np.asarray(t, dtype=np.float64)
        out = np.asarray(self.multipliers(t_arr), dtype=np.float64)
        return np.broadcast_to(out, t_arr.shape + (self.n_modes,)).copy()

    @classmethod
    def zero(cls, n_modes: int) -> "NoiseCoefficient":
        return cls(lambda t: np.zeros(np.shape(t) + (n_modes,)), n_modes, 0.0, "zero")

    @classmethod
    def identity(cls, q: CovarianceOperator) -> "NoiseCoefficient":
        N = q.n_modes
        return cls(lambda t: np.ones(np.shape(t) + (N,)), N, math.sqrt(q.trace), "identity")

    @classmethod
    def constant(cls, values, q: CovarianceOperator) -> "NoiseCoefficient":
        v = np.array(values, dtype=np.float64)
        return cls(lambda t: np.broadcast_to(v, np.shape(t) + v.shape), v.size, hs_norm(v, q), "constant")

    @classmethod
    def modulated(cls, amplitude: float, modulation: float, decay: float, q: CovarianceOperator) -> "NoiseCoefficient":
        """sigma_n(t) = a (1 + m sin(2 pi t)) n^{-decay}."""
        N = q.n_modes
        profile = np.arange(1, N + 1, dtype=np.float64) ** (-float(decay))
        a, m = float(amplitude), float(modulation)

        def mult(t):
            return a * (1.0 + m * np.sin(2.0 * np.pi * np.asarray(t)))[..., None] * profile

        bound = abs(a) * (1.0 + abs(m)) * hs_norm(profile, q)
        return cls(mult, N, bound, f"modulated(a={a}, m={m}, decay={decay})")

    def check_bound(self, q: CovarianceOperator, times) -> float:
        """Largest sampled ||sigma(t)||_{L_2^0}; raises if it exceeds the declared bound."""
        vals = self(np.asarray(times, dtype=np.float64))
        norms = np.sqrt((vals**2 * q.eigenvalues).sum(axis=-1))
        worst = float(norms.max())
        if worst > self.bound * (1 + 1e-12) + 1e-300:
            raise HypothesisError("H.4", f"||sigma(t)|| reaches {worst:.6g} > declared bound {self.bound:.6g}")
        return worst


def sample_qfbm_batch(q: CovarianceOperator, h, grid: TimeGrid, seed: int, n_paths: int,
                      start: int = 0, modes=None):
    """(n_paths, K+1, N) Q-fBm samples and the Cholesky jitter.

    Mode n of path i uses the substream keyed ``(QFBM, start + i, n)``; pass
    ``modes`` (1-based) to draw only some modes, the others are left at 0.
    """
    hp = _hurst(h)
    L, jitter = cholesky_factor(hp, grid)
    K, N = grid.n_steps, q.n_modes
    modes = range(1, N + 1) if modes is None else modes
    out = np.zeros((n_paths, K + 1, N))
    for n in modes:
        lam = q.eigenvalues[n - 1]
        if lam == 0.0:
            continue
        z = np.empty((n_paths, K))
        for i in range(n_paths):
            z[i] = substream(seed, STREAM_QFBM + (start + i, n)).standard_normal(K)
        out[:, 1:, n - 1] = math.sqrt(lam) * rowwise(L, z)
    return out, jitter


def sample_qfbm(q: CovarianceOperator, h, grid: TimeGrid, seed: int, path_index: int = 0) -> QfbmPath:
    values, jitter = sample_qfbm_batch(q, h, grid, seed, 1, start=path_index)
    return QfbmPath(grid, values[0], _hurst(h), int(seed), int(path_index), jitter)


def hs_norm(sigma_at_t, q: CovarianceOperator) -> float:
    """||sigma||_{L_2^0} = sqrt(sum_n lambda_n sigma_n^2) for diagonal sigma."""
    s = np.asarray(sigma_at_t, dtype=np.float64).reshape(-1)
    if s.size != q.n_modes:
        raise ValueError(f"sigma has {s.size} modes, Q has {q.n_modes}")
    return float(math.sqrt(np.sum(q.eigenvalues * s * s)))


def _sigma_grid(sigma, grid: TimeGrid, n_modes: int) -> np.ndarray:
    vals = sigma(grid.points) if callable(sigma) else np.asarray(sigma, dtype=np.float64)
    if vals.shape != (grid.points.size, n_modes):
        raise GridError("sigma samples do not match the grid and mode count")
    return vals


def wiener_integral_grid(sigma, path: QfbmPath) -> np.ndarray:
    """int_0^{t_k} sigma dB^H at every grid point, rows k = 0..K."""
    path.hurst.require_long_memory()
    S = _sigma_grid(sigma, path.grid, path.n_modes)
    out = np.zeros_like(path.values)
    np.cumsum(S[:-1] * path.increments, axis=0, out=out[1:])
    return out


def wiener_integral(sigma, path: QfbmPath, t: float) -> SpectralField:
    k = path.grid.index_of(t)
    path.hurst.require_long_memory()
    S = _sigma_grid(sigma, path.grid, path.n_modes)
    return SpectralField((S[:k] * path.increments[:k]).sum(axis=0))


def stochastic_convolution_grid(family, sigma, path: QfbmPath, k0: int = 0, k1: int | None = None) -> np.ndarray:
    """Z(t_k) = sum_{j<k} U(t_k, t_j) sigma(t_j) dB^H_j for every grid index k0..k1."""
    if family is None:
        out = wiener_integral_grid(sigma, path)
        k1 = out.shape[0] - 1 if k1 is None else k1
        return out[k0 : k1 + 1] - out[k0]
    path.hurst.require_long_memory()
    S = _sigma_grid(sigma, path.grid, path.n_modes)
    return family.propagator(path.grid).left(S, path.increments, k0, k1)


def stochastic_convolution(family, sigma, path: QfbmPath, t: float) -> SpectralField:
    """Z(t) = int_0^t U(t, s) sigma(s) dB^H(s); ``family=None`` means U = I."""
    k = path.grid.index_of(t)
    if family is None:
        return wiener_integral(sigma, path, t)
    path.hurst.require_long_memory()
    S = _sigma_grid(sigma, path.grid, path.n_modes)
    prop = family.propagator(path.grid)
    if k == 0:
        return SpectralField(np.zeros(path.n_modes))
    terms = prop.transfer(k, np.arange(k), S[:k] * path.increments[:k])
    return SpectralField(terms.sum(axis=0))


def convolution_bound(h, t: float, M: float, L: float) -> float:
    """2H t^{2H} M^2 L^2: the second-moment bound on Z(t) with the inclusion constant 2H t^{2H-1}."""
    H = _hurst(h).value
    return 2.0 * H * t ** (2.0 * H) * M**2 * L**2
