"""Time-dependent generator A(t) = d^2/dz^2 + b(t, z) on (0, pi) and its evolution family.

With Dirichlet conditions the Laplacian is diagonal in the sine basis
(eigenvalues -n^2).  The evolution family is the product formula

    U(t, s) x = T(t - s) [exp(int_s^t b(tau, .) dtau) x],

which is diagonal (and exactly two-parameter) when b does not depend on z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

from . import _kernels
from .errors import DomainError, HypothesisError, QuadratureError
from .fbm import TimeGrid
from .spectral import SpectralField, basis

__all__ = [
    "Potential",
    "TimeVaryingGenerator",
    "EvolutionFamily",
    "GridPropagator",
    "StabilityReport",
    "stability_margin",
    "smoothing_check",
    "continuity_probe",
]

POTENTIAL_TOL = 1e-12


class Potential:
    """The zeroth-order coefficient b(t, z), bounded above by -gamma.

    ``func`` is called as ``func(t)`` when ``spatial`` is false and as
    ``func(t, z)`` (z an array of nodes) otherwise.
    """

    def __init__(self, func: Callable, gamma: float, sup_abs: float, spatial: bool = False, label: str = "custom"):
        if not gamma > 0:
            raise HypothesisError("H.1", f"potential bound gamma must be positive, got {gamma}")
        self.func = func
        self.gamma = float(gamma)
        self.sup_abs = float(sup_abs)
        self.spatial = bool(spatial)
        self.label = label

    @classmethod
    def constant(cls, value: float) -> "Potential":
        value = float(value)
        return cls(lambda t: value, -value, abs(value), False, f"constant({value})")

    @classmethod
    def periodic(cls, gamma: float, amplitude: float, spatial: bool = False) -> "Potential":
        """b(t) = -gamma - a sin^2(pi t), or b(t, z) = -gamma - a sin^2(pi t) sin(z)."""
        g, a = float(gamma), float(amplitude)
        if a < 0:
            raise HypothesisError("H.1", "potential amplitude must be nonnegative")
        if spatial:
            def func(t, z):
                return -g - a * math.sin(math.pi * t) ** 2 * np.sin(z)
        else:
            def func(t):
                return -g - a * math.sin(math.pi * t) ** 2
        return cls(func, g, g + a, spatial, f"periodic(gamma={g}, amplitude={a}, spatial={spatial})")

    def __call__(self, t, z=None):
        if self.spatial:
            return np.asarray(self.func(t, z), dtype=np.float64)
        return float(self.func(t))

    def integral(self, s: float, t: float, nodes=None):
        """int_s^t b(tau, .) dtau by adaptive quadrature."""
        if t == s:
            return np.zeros(len(nodes)) if self.spatial else 0.0
        if self.spatial:
            val, err = integrate.quad_vec(lambda tau: self.func(tau, nodes), s, t,
                                          epsabs=POTENTIAL_TOL, epsrel=POTENTIAL_TOL)
            if not np.all(np.isfinite(val)) or err > 1e-10:
                raise QuadratureError(f"potential integral over [{s}, {t}] did not converge")
            return np.asarray(val)
        res = integrate.quad(self.func, s, t, epsabs=POTENTIAL_TOL, epsrel=POTENTIAL_TOL,
                             limit=200, full_output=1)
        if len(res) > 3 or res[1] > 1e-10:
            raise QuadratureError(f"potential integral over [{s}, {t}] did not converge")
        return res[0]


class TimeVaryingGenerator:
    """A(t) = Laplacian (Dirichlet, eigenvalues -n^2) + b(t, z), truncated to N modes."""

    def __init__(self, n_modes: int, potential: Potential):
        if n_modes < 1:
            raise ValueError("need at least one mode")
        self.n_modes = int(n_modes)
        self.potential = potential
        self.basis = basis(self.n_modes)
        self.eigenvalues = self.basis.eigenvalues

    @property
    def spatial(self) -> bool:
        return self.potential.spatial

    @property
    def gamma(self) -> float:
        return self.potential.gamma

    def check_bound(self, times) -> None:
        """b(t, z) <= -gamma at every sampled (t, z)."""
        for t in np.atleast_1d(times):
            vals = self.potential(float(t), self.basis.nodes)
            if np.max(vals) > -self.gamma + 1e-14:
                raise HypothesisError("H.1", f"b({t}, .) exceeds -gamma = {-self.gamma}")

    def apply(self, s: float, x):
        """A(s) x on coefficient arrays of shape (..., N)."""
        x = np.asarray(x, dtype=np.float64)
        out = self.eigenvalues * x
        if self.spatial:
            return out + self.basis.multiply(x, self.potential(s, self.basis.nodes))
        return out + self.potential(s) * x

    def apply_grid(self, times, X):
        """Row k of the result is A(times[k]) X[k]."""
        X = np.asarray(X, dtype=np.float64)
        out = self.eigenvalues * X
        if self.spatial:
            weights = np.stack([self.potential(float(t), self.basis.nodes) for t in times])
            return out + self.basis.from_nodal(self.basis.to_nodal(X) * weights)
        b = np.array([self.potential(float(t)) for t in times])
        return out + b[:, None] * X

    def operator_norm_bound(self) -> float:
        """Upper bound on ||A(t)|| over the truncated space."""
        return float(self.n_modes**2 + self.potential.sup_abs)

    def inverse_norm_bound(self) -> float:
        """M_* with ||A(t)^{-1}|| <= M_*; the spectrum lies below -(1 + gamma)."""
        return 1.0 / (1.0 + self.gamma)


class EvolutionFamily:
    """U(t, s) generated by a TimeVaryingGenerator, with ||U(t,s)|| <= M e^{-beta (t-s)}."""

    def __init__(self, generator: TimeVaryingGenerator):
        self.generator = generator
        self.M = 1.0
        self.beta = generator.gamma + 1.0
        self._propagators: dict[bytes, GridPropagator] = {}

    @property
    def n_modes(self) -> int:
        return self.generator.n_modes

    @property
    def spatial(self) -> bool:
        return self.generator.spatial

    def semigroup_factors(self, t):
        t = np.asarray(t, dtype=np.float64)
        return np.exp(np.multiply.outer(t, self.generator.eigenvalues))

    def semigroup_apply(self, t: float, x):
        if t < 0:
            raise DomainError(f"semigroup needs t >= 0, got {t}")
        c = _coeffs(x)
        return SpectralField(np.exp(self.generator.eigenvalues * t) * c)

    def evolution_apply(self, t: float, s: float, x):
        if s > t:
            raise DomainError(f"U(t, s) needs s <= t, got s = {s} > t = {t}")
        if s < 0:
            raise DomainError("U(t, s) needs s >= 0")
        c = _coeffs(x)
        if t == s:
            return SpectralField(c.copy())
        sem = np.exp(self.generator.eigenvalues * (t - s))
        gen = self.generator
        if gen.spatial:
            expo = gen.potential.integral(s, t, gen.basis.nodes)
            return SpectralField(sem * gen.basis.multiply(c, np.exp(expo)))
        return SpectralField(sem * math.exp(gen.potential.integral(s, t)) * c)

    def generator_apply(self, s: float, x):
        return SpectralField(self.generator.apply(s, _coeffs(x)))

    def propagator(self, grid: TimeGrid) -> "GridPropagator":
        key = grid.key()
        prop = self._propagators.get(key)
        if prop is None:
            prop = GridPropagator(self, grid)
            self._propagators[key] = prop
        return prop


class GridPropagator:
    """Evolution-family operations restricted to the points of one time grid.

    Caches int_0^{t_k} b once so that U(t_k, t_j) = exp(-n^2 (t_k - t_j)) exp(B_k - B_j).
    """

    def __init__(self, family: EvolutionFamily, grid: TimeGrid):
        gen = family.generator
        gen.check_bound(grid.points)
        self.family = family
        self.grid = grid
        self.t = grid.points
        self.dt = grid.steps
        self.lam = gen.eigenvalues
        self.spatial = gen.spatial
        self.basis = gen.basis
        if self.spatial:
            pieces = [gen.potential.integral(a, b, gen.basis.nodes) for a, b in zip(self.t[:-1], self.t[1:])]
            cum = np.vstack([np.zeros(gen.basis.n_nodes), np.cumsum(pieces, axis=0)])
        else:
            pieces = [gen.potential.integral(a, b) for a, b in zip(self.t[:-1], self.t[1:])]
            cum = np.concatenate([[0.0], np.cumsum(pieces)])
            self._pieces = np.asarray(pieces)
            self.step = np.exp(np.outer(self.dt, self.lam) + self._pieces[:, None])
        self.cum = cum

    # -- basic transfers ---------------------------------------------------
    def factors(self, k: int, js) -> np.ndarray:
        """Diagonal multipliers of U(t_k, t_j) for the indices js (diagonal case only)."""
        js = np.asarray(js)
        return np.exp(np.outer(self.t[k] - self.t[js], self.lam) + (self.cum[k] - self.cum[js])[:, None])

    def transfer(self, k: int, js, X) -> np.ndarray:
        """Rows U(t_k, t_j) X_j for every j in js."""
        js = np.atleast_1d(np.asarray(js))
        X = np.asarray(X, dtype=np.float64)
        if not self.spatial:
            return self.factors(k, js) * X
        sem = np.exp(np.outer(self.t[k] - self.t[js], self.lam))
        w = np.exp(self.cum[k][None, :] - self.cum[js])
        return sem * self.basis.from_nodal(self.basis.to_nodal(X) * w)

    def from_index(self, k0: int, x, k1: int | None = None) -> np.ndarray:
        """U(t_k, t_{k0}) x for k = k0..k1, one row per k."""
        x = np.asarray(x, dtype=np.float64)
        k1 = self.t.size - 1 if k1 is None else k1
        ks = np.arange(k0, k1 + 1)
        if not self.spatial:
            f = np.exp(np.outer(self.t[ks] - self.t[k0], self.lam) + (self.cum[ks] - self.cum[k0])[:, None])
            return f * x
        out = np.empty((ks.size, x.size))
        for i, k in enumerate(ks):
            out[i] = self.transfer(k, [k0], x[None, :])[0]
        return out

    def to_terminal(self, H) -> np.ndarray:
        """Rows U(T, t_j) H_j for all grid indices j."""
        K = self.t.size - 1
        return self.transfer(K, np.arange(K + 1), H)

    def terminal_matrices(self) -> np.ndarray:
        """U(T, t_j) as dense (N, N) matrices, stacked over j."""
        K1, N = self.t.size, self.lam.size
        if not self.spatial:
            f = self.factors(K1 - 1, np.arange(K1))
            out = np.zeros((K1, N, N))
            idx = np.arange(N)
            out[:, idx, idx] = f
            return out
        out = np.empty((K1, N, N))
        eye = np.eye(N)
        for j in range(K1):
            out[j] = self.transfer(K1 - 1, np.full(N, j), eye).T
        return out

    # -- causal convolutions ----------------------------------------------
    def trapz(self, H, k0: int = 0, k1: int | None = None) -> np.ndarray:
        """Composite-trapezoid int_{t_{k0}}^{t_k} U(t_k, s) h(s) ds for k = k0..k1.

        ``H`` holds samples on the whole grid; only rows k0..k1 are read.
        """
        k1 = self.t.size - 1 if k1 is None else k1
        H = np.asarray(H, dtype=np.float64)[k0 : k1 + 1]
        if not self.spatial:
            return _kernels.trapz_convolution(self.step[k0:k1], H, self.dt[k0:k1])
        out = np.zeros_like(H)
        for i in range(1, H.shape[0]):
            k = k0 + i
            js = np.arange(k0, k + 1)
            w = np.zeros(js.size)
            d = self.dt[k0:k]
            w[:-1] += 0.5 * d
            w[1:] += 0.5 * d
            out[i] = (w[:, None] * self.transfer(k, js, H[: i + 1])).sum(axis=0)
        return out

    def left(self, H, dB, k0: int = 0, k1: int | None = None) -> np.ndarray:
        """Left-point sums sum_{k0 <= j < k} U(t_k, t_j) H_j dB_j for k = k0..k1.

        ``dB`` has one row per grid step.
        """
        k1 = self.t.size - 1 if k1 is None else k1
        H = np.asarray(H, dtype=np.float64)[k0:k1]
        dB = np.asarray(dB, dtype=np.float64)[k0:k1]
        if not self.spatial:
            return _kernels.left_convolution(self.step[k0:k1], H, dB)
        out = np.zeros((k1 - k0 + 1, self.lam.size))
        prod = H * dB
        for i in range(1, out.shape[0]):
            k = k0 + i
            out[i] = self.transfer(k, np.arange(k0, k), prod[:i]).sum(axis=0)
        return out


@dataclass(frozen=True)
class StabilityReport:
    n_probes: int
    worst_ratio: float
    worst_normalized: float
    worst_probe: tuple
    violations: int

    @property
    def ok(self) -> bool:
        return self.violations == 0


def stability_margin(family: EvolutionFamily, probes, slack: float = 1e-12) -> StabilityReport:
    """Check ||U(t,s) x|| <= M e^{-beta (t-s)} ||x|| on (t, s, x) probes; failures are counted, not raised."""
    worst_ratio, worst_norm, worst_probe, bad = 0.0, -math.inf, (), 0
    n = 0
    for t, s, x in probes:
        n += 1
        xn = np.linalg.norm(_coeffs(x))
        if xn == 0:
            continue
        ratio = family.evolution_apply(t, s, x).norm() / xn
        bound = family.M * math.exp(-family.beta * (t - s))
        if ratio > bound + slack:
            bad += 1
        if ratio / bound > worst_norm:
            worst_norm, worst_ratio, worst_probe = ratio / bound, ratio, (t, s)
    return StabilityReport(n, worst_ratio, worst_norm, worst_probe, bad)


def smoothing_check(deltas, n_modes: int):
    """sup_n n^2 e^{-n^2 d} against e^{-1}/d for each duration d."""
    n2 = np.arange(1, n_modes + 1, dtype=np.float64) ** 2
    rows = []
    for d in deltas:
        sup = float(np.max(n2 * np.exp(-n2 * d)))
        bound = math.exp(-1.0) / d
        rows.append((float(d), sup, bound, sup <= bound * (1 + 1e-12)))
    return rows


def continuity_probe(family: EvolutionFamily, t: float, s: float, x, steps=(1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)):
    """||U(t+h, s) x - U(t, s) x|| for a decreasing sequence of h."""
    base = family.evolution_apply(t, s, x)
    return [(h, (family.evolution_apply(t + h, s, x) - base).norm()) for h in steps]


def _coeffs(x):
    return x.coefficients if isinstance(x, SpectralField) else np.asarray(x, dtype=np.float64)
