"""Sine-basis representation of X = L^2(0, pi) truncated to N modes.

e_n(z) = sqrt(2/pi) sin(n z).  Nodal values live on the collocation points
z_j = j pi / (J + 1), j = 1..J with J = 2N; the transform pair below is the
type-I discrete sine transform, exact on fields with at most J modes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = ["SpectralBasis", "SpectralField", "basis"]


class SpectralBasis:
    def __init__(self, n_modes: int, n_nodes: int | None = None):
        if n_modes < 1:
            raise ValueError("need at least one mode")
        self.n_modes = int(n_modes)
        self.n_nodes = int(n_nodes) if n_nodes is not None else 2 * self.n_modes
        if self.n_nodes < self.n_modes:
            raise ValueError("need at least as many nodes as modes")
        J = self.n_nodes
        self.nodes = np.arange(1, J + 1) * np.pi / (J + 1)
        n = np.arange(1, self.n_modes + 1)
        # synthesis: nodal = coeffs @ S.T ; analysis: coeffs = nodal @ P.T
        self._S = np.sqrt(2.0 / np.pi) * np.sin(np.outer(self.nodes, n))
        self._P = (np.pi / (J + 1)) * self._S.T
        self.wavenumbers = n.astype(np.float64)
        self.eigenvalues = -(self.wavenumbers**2)

    def to_nodal(self, coeffs):
        return np.asarray(coeffs, dtype=np.float64) @ self._S.T

    def from_nodal(self, nodal):
        return np.asarray(nodal, dtype=np.float64) @ self._P.T

    def multiply(self, coeffs, weights):
        """Project the pointwise product (sum x_n e_n) * w(z_j) back onto the modes."""
        return self.from_nodal(self.to_nodal(coeffs) * weights)

    def mode_vector(self, n: int) -> np.ndarray:
        e = np.zeros(self.n_modes)
        e[n - 1] = 1.0
        return e


@lru_cache(maxsize=32)
def basis(n_modes: int) -> SpectralBasis:
    return SpectralBasis(n_modes)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """A state in X as sine-mode coefficients x_1..x_N."""

    coefficients: np.ndarray

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=np.float64).reshape(-1)
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def zeros(cls, n_modes: int) -> "SpectralField":
        return cls(np.zeros(n_modes))

    @classmethod
    def mode(cls, n: int, n_modes: int, amplitude: float = 1.0) -> "SpectralField":
        return cls(amplitude * basis(n_modes).mode_vector(n))

    @classmethod
    def from_nodal(cls, nodal, n_modes: int) -> "SpectralField":
        return cls(basis(n_modes).from_nodal(nodal))

    @property
    def n_modes(self) -> int:
        return self.coefficients.size

    def nodal(self) -> np.ndarray:
        return basis(self.n_modes).to_nodal(self.coefficients)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coefficients))

    def __add__(self, other):
        return SpectralField(self.coefficients + _coeffs(other))

    def __sub__(self, other):
        return SpectralField(self.coefficients - _coeffs(other))

    def __mul__(self, c):
        return SpectralField(self.coefficients * float(c))

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(-self.coefficients)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coefficients, dtype=dtype)

    def allclose(self, other, rtol=1e-12, atol=1e-14) -> bool:
        return bool(np.allclose(self.coefficients, _coeffs(other), rtol=rtol, atol=atol))


def _coeffs(x):
    return x.coefficients if isinstance(x, SpectralField) else np.asarray(x, dtype=np.float64)
