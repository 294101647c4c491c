from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from fbmsteer.evolution import EvolutionFamily, Potential, TimeVaryingGenerator
from fbmsteer.mild import DelayFunctions, HistorySegment, LinearMap, NeutralProblem, ZeroMap
from fbmsteer.noise import CovarianceOperator, NoiseCoefficient
from fbmsteer.scenario import default_config_text, parse_config

FIXTURES = Path(__file__).parent / "fixtures"

# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def load_oracles() -> dict:
    table = {}
    for line in (FIXTURES / "oracle_constants.txt").read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        name, inputs, value, tol = (part.strip() for part in line.split("|"))
        table[(name, inputs)] = (float(value), float(tol))
    return table


@pytest.fixture(scope="session")
def oracles():
    return load_oracles()


@pytest.fixture(scope="session")
def default_config():
    return parse_config(default_config_text())


@pytest.fixture(scope="session")
def default_scenario(default_config):
    return default_config.build()


@pytest.fixture(scope="session")
def noiseless_scenario(default_config):
    return default_config.replace(sigma={"amplitude": 0.0}).build()


def config_dict(**changes) -> dict:
    d = json.loads(default_config_text())
    for k, v in changes.items():
        if isinstance(v, dict) and isinstance(d.get(k), dict) and k not in ("f", "g", "r", "rho"):
            d[k].update(v)
        else:
            d[k] = v
    return d


def scalar_problem(f=None, g=None, rho=0.0, r=0.0, tau=0.5, phi=1.0, b=-1.0, sigma=0.0):
    """One-mode problem with constant potential b, so A = -1 + b."""
    q = CovarianceOperator([1.0])
    family = EvolutionFamily(TimeVaryingGenerator(1, Potential.constant(b)))
    return NeutralProblem(
        family,
        f if f is not None else ZeroMap(),
        g if g is not None else ZeroMap(),
        NoiseCoefficient.constant([sigma], q),
        q,
        DelayFunctions.constant(r, rho, tau),
        HistorySegment.from_function(lambda t: np.array([phi]), tau),
    )


def linear_problem(n_modes=2, phi=None, b=-1.0):
    """f = g = sigma = 0 on n modes; phi given as a coefficient vector (default zero)."""
    q = CovarianceOperator.power(n_modes, 2.0)
    family = EvolutionFamily(TimeVaryingGenerator(n_modes, Potential.constant(b)))
    phi = np.zeros(n_modes) if phi is None else np.asarray(phi, dtype=float)
    return NeutralProblem(
        family, ZeroMap(), ZeroMap(), NoiseCoefficient.zero(n_modes), q,
        DelayFunctions.constant(0.1, 0.1, 0.2), HistorySegment.from_function(lambda t: phi, 0.2),
    )


def method_of_steps(cf, cg, lag, T, b=-1.0):
    """Oracle for d[x + cg x(t-lag)] = ((b-1) x + cf x(t-lag)) dt with phi = 1, solved interval by interval."""
    a = b - 1.0
    prev = lambda t: 1.0  # x on the previous interval
    pieces = []
    t0, x0 = 0.0, 1.0
    while t0 < T - 1e-14:
        t1 = min(t0 + lag, T)
        p = prev
        y0 = x0 + cg * p(t0 - lag)
        rhs = lambda t, y, p=p: [a * (y[0] - cg * p(t - lag)) + cf * p(t - lag)]
        sol = solve_ivp(rhs, (t0, t1), [y0], rtol=1e-12, atol=1e-14, dense_output=True)
        xs = lambda t, sol=sol, p=p: float(sol.sol(t)[0]) - cg * p(t - lag)
        pieces.append((t0, t1, xs))
        prev, x0, t0 = xs, xs(t1), t1
    return lambda t: next(f(t) for lo, hi, f in pieces if lo - 1e-14 <= t <= hi + 1e-14)


__all__ = ["config_dict", "scalar_problem", "linear_problem", "method_of_steps", "LinearMap", "ACCEPTANCE_LINES"]


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
