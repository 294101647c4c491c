"""Causal convolution kernels used by the mild-solution sweeps.

Two implementations of each kernel exist: a numba ``@njit`` version and a
pure-numpy loop.  They perform the same arithmetic in the same order.  Set
``FBMSTEER_DISABLE_NUMBA=1`` to force the numpy path (numba missing also
falls back silently).
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "USING_NUMBA",
    "trapz_convolution",
    "left_convolution",
    "trapz_convolution_numpy",
    "left_convolution_numpy",
]


def trapz_convolution_numpy(step, h, dt):
    """Trapezoid sums S_k = int_{t_0}^{t_k} U(t_k, s) h(s) ds for diagonal U.

    Parameters
    ----------
    step : (K, N) array
        Per-mode one-step propagators U(t_{k+1}, t_k).
    h : (K+1, N) array
        Integrand samples on the grid.
    dt : (K,) array
        Step sizes.
    """
    K = step.shape[0]
    out = np.zeros_like(h)
    for k in range(K):
        half = 0.5 * dt[k]
        out[k + 1] = step[k] * (out[k] + half * h[k]) + half * h[k + 1]
    return out


def left_convolution_numpy(step, h, dB):
    """Left-point sums Z_k = sum_{j<k} U(t_k, t_j) h_j dB_j for diagonal U."""
    K = step.shape[0]
    out = np.zeros((K + 1, step.shape[1]))
    for k in range(K):
        out[k + 1] = step[k] * (out[k] + h[k] * dB[k])
    return out


def _disabled() -> bool:
    return os.environ.get("FBMSTEER_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}


try:
    if _disabled():
        raise ImportError("numba disabled by FBMSTEER_DISABLE_NUMBA")
    from numba import njit

    @njit(cache=True)
    def trapz_convolution_numba(step, h, dt):
        K, N = step.shape
        out = np.zeros((K + 1, N))
        for k in range(K):
            half = 0.5 * dt[k]
            for n in range(N):
                out[k + 1, n] = step[k, n] * (out[k, n] + half * h[k, n]) + half * h[k + 1, n]
        return out

    @njit(cache=True)
    def left_convolution_numba(step, h, dB):
        K, N = step.shape
        out = np.zeros((K + 1, N))
        for k in range(K):
            for n in range(N):
                out[k + 1, n] = step[k, n] * (out[k, n] + h[k, n] * dB[k, n])
        return out

    USING_NUMBA = True
except ImportError:
    trapz_convolution_numba = None
    left_convolution_numba = None
    USING_NUMBA = False


def trapz_convolution(step, h, dt):
    step = np.ascontiguousarray(step, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    dt = np.ascontiguousarray(dt, dtype=np.float64)
    if USING_NUMBA:
        return trapz_convolution_numba(step, h, dt)
    return trapz_convolution_numpy(step, h, dt)


def left_convolution(step, h, dB):
    step = np.ascontiguousarray(step, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    dB = np.ascontiguousarray(dB, dtype=np.float64)
    if USING_NUMBA:
        return left_convolution_numba(step, h, dB)
    return left_convolution_numpy(step, h, dB)
