"""JSON scenario configuration: parsing, hypothesis checks and model assembly.

A scenario document is a JSON object; keys not given fall back to the
shipped default scenario.  ``parse_config`` reports every violation at once
and names the hypothesis each one breaks.  See docs/config.md for the schema.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field, fields
from importlib import resources

import numpy as np

from .errors import ConfigError, HypothesisError
from .evolution import EvolutionFamily, Potential, TimeVaryingGenerator
from .fbm import HurstParameter, TimeGrid
from .mild import H3_LIMIT, NONLINEARITIES, DelayFunctions, HistorySegment, NeutralProblem, make_nonlinearity
from .noise import CovarianceOperator, NoiseCoefficient, QfbmPath, sample_qfbm
from .steering import ControlSystem, InputOperator

__all__ = ["ScenarioConfig", "Scenario", "parse_config", "load_config", "default_config_text"]


def default_config_text() -> str:
    return resources.files("fbmsteer").joinpath("scenarios/default.json").read_text()


@dataclass
class ScenarioConfig:
    hurst: float
    grid: dict
    modes: int
    controlled_modes: int
    noise_eigenvalues: dict
    potential: dict
    f: dict
    g: dict
    tau: float
    r: dict
    rho: dict
    history: dict
    sigma: dict
    target: list
    M_b: float | None
    M_w: float | None
    tolerances: dict
    seed: int
    n_paths: int
    refine_factor: int
    output_dir: str

    @property
    def horizon(self) -> float:
        return float(self.grid["T"])

    @property
    def steps(self) -> int:
        return int(self.grid["K"])

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def replace(self, **changes) -> "ScenarioConfig":
        d = self.to_dict()
        for k, v in changes.items():
            if isinstance(v, dict) and isinstance(d.get(k), dict):
                d[k].update(v)
            else:
                d[k] = v
        return parse_config(json.dumps(d))

    def build(self) -> "Scenario":
        return _build(self)


_FIELDS = [f.name for f in fields(ScenarioConfig)]


def _default_dict() -> dict:
    return json.loads(default_config_text())


def parse_config(text: str, *, check: bool = True) -> ScenarioConfig:
    """Parse and validate a scenario document.

    Raises ConfigError listing every violation; syntax errors carry line and column.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from exc
    if not isinstance(doc, dict):
        raise ConfigError(["scenario must be a JSON object"])
    base = _default_dict()
    unknown = sorted(set(doc) - set(_FIELDS))
    violations = [f"unknown key {k!r}" for k in unknown]
    for k, v in doc.items():
        if k in base and isinstance(base[k], dict) and isinstance(v, dict) and k not in ("f", "g", "r", "rho"):
            base[k].update(v)
        elif k in _FIELDS:
            base[k] = v
    violations += _static_violations(base)
    if violations:
        raise ConfigError(violations)
    cfg = ScenarioConfig(**{k: base[k] for k in _FIELDS})
    if check:
        violations = _model_violations(cfg)
        if violations:
            raise ConfigError(violations)
    return cfg


def load_config(path) -> ScenarioConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def _num(d, key, violations, where, positive=False, nonneg=False):
    v = d.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        violations.append(f"{where}.{key} must be a finite number")
        return None
    if positive and not v > 0:
        violations.append(f"{where}.{key} must be positive")
    if nonneg and v < 0:
        violations.append(f"{where}.{key} must be nonnegative")
    return float(v)


def _static_violations(c: dict) -> list[str]:
    v: list[str] = []
    H = c.get("hurst")
    if not isinstance(H, (int, float)) or not 0.5 < H < 1.0:
        v.append(f"hurst must lie in (1/2, 1), got {H!r}")
    _num(c["grid"], "T", v, "grid", positive=True)
    K = c["grid"].get("K")
    if not isinstance(K, int) or isinstance(K, bool) or K < 1:
        v.append("grid.K must be a positive integer")
    N = c.get("modes")
    if not isinstance(N, int) or N < 1:
        v.append("modes must be a positive integer")
        N = None
    Nc = c.get("controlled_modes")
    if not isinstance(Nc, int) or Nc < 1 or (N is not None and Nc > N):
        v.append("(H.5) controlled_modes must be an integer in [1, modes]")

    lam = c["noise_eigenvalues"]
    rule = lam.get("rule")
    if rule == "power":
        p = _num(lam, "exponent", v, "noise_eigenvalues")
        if p is not None and p <= 1.0:
            v.append(f"(trace-class) Q eigenvalues n^(-{p}) are not summable; exponent must exceed 1")
        _num(lam, "scale", v, "noise_eigenvalues", nonneg=True)
    elif rule == "explicit":
        vals = lam.get("values")
        if not isinstance(vals, list) or any(not isinstance(x, (int, float)) or x < 0 for x in vals):
            v.append("(trace-class) explicit Q eigenvalues must be a list of nonnegative numbers")
        elif N is not None and len(vals) < N:
            v.append("noise_eigenvalues.values needs at least one entry per mode")
    else:
        v.append(f"noise_eigenvalues.rule must be 'power' or 'explicit', got {rule!r}")

    pot = c["potential"]
    gam = _num(pot, "gamma", v, "potential")
    if gam is not None and not gam > 0:
        v.append("(H.1) potential.gamma must be positive so that b <= -gamma < 0")
    amp = _num(pot, "amplitude", v, "potential")
    if amp is not None and amp < 0:
        v.append("(H.1) potential.amplitude must be nonnegative")

    for key in ("f", "g"):
        spec = c[key]
        if not isinstance(spec, dict) or spec.get("name") not in NONLINEARITIES:
            v.append(f"(H.2) {key}.name must be one of {sorted(NONLINEARITIES)}")
        elif spec["name"] != "zero":
            _num(spec, "c", v, key)

    tau = _num(c, "tau", v, "scenario", positive=True)
    for key in ("r", "rho"):
        lo_hi = _delay_range(c[key], v, key)
        if lo_hi and tau is not None and (lo_hi[0] < 0 or lo_hi[1] > tau):
            v.append(f"delay {key} takes values in [{lo_hi[0]}, {lo_hi[1]}], outside [0, tau = {tau}]")

    hist = c["history"]
    for key in ("constant", "slope"):
        arr = hist.get(key, [])
        if not isinstance(arr, list) or any(not isinstance(x, (int, float)) or not math.isfinite(x) for x in arr):
            v.append(f"(H.4) history.{key} must be a list of finite numbers")
    pts = hist.get("points", 41)
    if not isinstance(pts, int) or pts < 2:
        v.append("history.points must be an integer >= 2")

    sig = c["sigma"]
    for key in ("amplitude", "modulation", "decay"):
        _num(sig, key, v, "sigma")

    tgt = c.get("target")
    if not isinstance(tgt, list) or any(not isinstance(x, (int, float)) for x in tgt):
        v.append("target must be a list of numbers")
    elif N is not None and len(tgt) != N:
        v.append(f"target has {len(tgt)} coefficients, expected {N}")

    for key in ("M_b", "M_w"):
        val = c.get(key)
        if val is not None and (not isinstance(val, (int, float)) or not val > 0):
            v.append(f"(H.5) {key} must be a positive number or null")

    tol = c["tolerances"]
    for key in ("picard", "steer", "gramian_floor", "terminal", "refined_terminal"):
        _num(tol, key, v, "tolerances", positive=True)
    for key in ("max_iter", "max_outer"):
        if not isinstance(tol.get(key), int) or tol[key] < 1:
            v.append(f"tolerances.{key} must be a positive integer")
    if not isinstance(c.get("seed"), int) or c["seed"] < 0:
        v.append("seed must be a nonnegative integer")
    if not isinstance(c.get("n_paths"), int) or c["n_paths"] < 1:
        v.append("n_paths must be a positive integer")
    rf = c.get("refine_factor")
    if not isinstance(rf, int) or isinstance(rf, bool) or rf < 2:
        v.append("refine_factor must be an integer >= 2")
    if not isinstance(c.get("output_dir"), str):
        v.append("output_dir must be a string")
    return v


def _delay_range(spec, v, key):
    kind = spec.get("kind") if isinstance(spec, dict) else None
    if kind == "constant":
        val = _num(spec, "value", v, key)
        return None if val is None else (val, val)
    if kind == "sinusoidal":
        mean = _num(spec, "mean", v, key)
        amp = _num(spec, "amplitude", v, key)
        _num(spec, "frequency", v, key)
        if mean is None or amp is None:
            return None
        return (mean - abs(amp), mean + abs(amp))
    v.append(f"delay {key}.kind must be 'constant' or 'sinusoidal'")
    return None


def _make_delay(spec):
    if spec["kind"] == "constant":
        val = float(spec["value"])
        return (lambda t: val), f"constant({val})"
    mean, amp, freq = float(spec["mean"]), float(spec["amplitude"]), float(spec["frequency"])
    return (lambda t: mean + amp * math.sin(2.0 * math.pi * freq * t)), f"sinusoidal({mean}, {amp}, {freq})"


@dataclass(eq=False)
class Scenario:
    config: ScenarioConfig
    hurst: HurstParameter
    grid: TimeGrid
    q: CovarianceOperator
    family: EvolutionFamily
    problem: NeutralProblem
    system: ControlSystem
    notes: dict = field(default_factory=dict)

    def noise(self, path_index: int = 0, grid: TimeGrid | None = None) -> QfbmPath:
        return sample_qfbm(self.q, self.hurst, grid or self.grid, self.config.seed, path_index)

    def control_system(self, grid: TimeGrid) -> ControlSystem:
        if grid == self.grid:
            return self.system
        return ControlSystem(self.problem, grid, self.system.target, self.system.input,
                             self.config.tolerances["gramian_floor"])


def _components(cfg: ScenarioConfig):
    N = cfg.modes
    lam = cfg.noise_eigenvalues
    if lam["rule"] == "power":
        q = CovarianceOperator.power(N, lam["exponent"], lam.get("scale", 1.0))
    else:
        q = CovarianceOperator(lam["values"][:N], "explicit")
    pot = Potential.periodic(cfg.potential["gamma"], cfg.potential["amplitude"], bool(cfg.potential.get("spatial", False)))
    family = EvolutionFamily(TimeVaryingGenerator(N, pot))
    r, r_label = _make_delay(cfg.r)
    rho, rho_label = _make_delay(cfg.rho)
    delays = DelayFunctions(r, rho, float(cfg.tau), r_label, rho_label)
    history = HistorySegment.linear(cfg.history.get("constant", []), cfg.history.get("slope", []),
                                    float(cfg.tau), N, cfg.history.get("points", 41))
    sig = cfg.sigma
    sigma = NoiseCoefficient.modulated(sig["amplitude"], sig["modulation"], sig["decay"], q)
    gains = InputOperator.first_modes(N, cfg.controlled_modes).gains
    return q, family, delays, history, sigma, gains


def _model_violations(cfg: ScenarioConfig) -> list[str]:
    try:
        _build(cfg)
    except ConfigError as exc:
        return exc.violations
    return []


def _build(cfg: ScenarioConfig) -> Scenario:
    violations = []
    try:
        q, family, delays, history, sigma, gains = _components(cfg)
    except HypothesisError as exc:
        raise ConfigError([str(exc)]) from exc
    f = make_nonlinearity(cfg.f)
    g = make_nonlinearity(cfg.g)
    grid = TimeGrid.uniform(cfg.horizon, cfg.steps)
    problem = None
    try:
        problem = NeutralProblem(family, f, g, sigma, q, delays, history, gains)
    except HypothesisError as exc:
        violations.append(str(exc))
    except ValueError as exc:
        violations.append(str(exc))
    system = None
    try:
        system = ControlSystem(family, grid, cfg.target, InputOperator(gains), cfg.tolerances["gramian_floor"])
    except HypothesisError as exc:
        violations.append(str(exc))
    if system is not None:
        if cfg.M_w is not None and cfg.M_w < system.M_w:
            violations.append(f"(H.5) declared M_w = {cfg.M_w} is below the Gramian bound {system.M_w:.6g}")
        if cfg.M_b is not None and cfg.M_b < system.M_b:
            violations.append(f"(H.5) declared M_b = {cfg.M_b} is below ||B|| = {system.M_b:.6g}")
    if violations:
        raise ConfigError(violations)
    notes = {
        "L_star_M_star": problem.constants.L_star * problem.constants.M_star,
        "H3_limit": H3_LIMIT,
        "M_w": system.M_w,
        "gramian_lambda_min": system.lambda_min,
    }
    return Scenario(cfg, HurstParameter(cfg.hurst), grid, q, family, problem, system, notes)
