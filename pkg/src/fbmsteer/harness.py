"""Seeded experiment pipelines behind the command line.

``run(command, config)`` executes one pipeline and returns a RunReport together
with the tabular artifacts it produced (kept in memory; the CLI writes them).
Every random draw comes from substreams of ``config.seed`` keyed by path index
and mode, so results do not depend on batch size or worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import __version__
from ._kernels import USING_NUMBA
from .evolution import EvolutionFamily, Potential, TimeVaryingGenerator, smoothing_check, stability_margin
from .fbm import TimeGrid, covariance, kernel_representation_matrix, sample_matrix
from .mild import contraction_constant, picard_solve
from .noise import convolution_bound, sample_qfbm_batch, stochastic_convolution_grid, QfbmPath
from .rng import substream
from .scenario import Scenario, ScenarioConfig, parse_config
from .steering import ControlSignal, ControlSystem, refined_terminal_error, steer

__all__ = ["COMMANDS", "RunReport", "Artifact", "run"]

# substream keys for validation draws (path samples use the keys in rng)
_STREAM_PAIRS = (3,)
_STREAM_PROBES = (4,)
_VALIDATION_STEPS = 64


@dataclass
class Artifact:
    """A CSV table: header names and a 2-D float array."""

    name: str
    header: list
    rows: np.ndarray


@dataclass
class RunReport:
    command: str
    config: dict
    suites: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(s["passed"] for s in self.suites)

    def check(self, name: str, passed: bool, **detail) -> bool:
        self.suites.append({"name": name, "passed": bool(passed), "detail": _plain(detail)})
        return bool(passed)

    def as_dict(self) -> dict:
        return {
            "command": self.command,
            "passed": self.passed,
            "config": self.config,
            "suites": self.suites,
            "summary": _plain(self.summary),
            "provenance": _plain(self.provenance),
        }


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    return obj


def _within(est: float, se: float, expected: float, k: float = 3.0) -> bool:
    return abs(est - expected) <= k * se


def _moment(x: np.ndarray):
    """Sample mean and its standard error."""
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


# ---------------------------------------------------------------- validate-noise

def validate_noise(sc: Scenario, report: RunReport) -> list:
    cfg = sc.config
    n, seed, T, H = cfg.n_paths, cfg.seed, cfg.horizon, sc.hurst
    grid = TimeGrid.uniform(T, _VALIDATION_STEPS)
    half = grid.index_of(T / 2)
    X, jitter = sample_matrix(H, grid, n, seed)
    report.provenance["jitter"] = max(report.provenance.get("jitter", 0.0), jitter)

    est, se = _moment(X[:, -1] ** 2)
    report.check("fbm-variance", _within(est, se, covariance(H, T, T)),
                 estimate=est, standard_error=se, expected=covariance(H, T, T), t=T, paths=n)
    est, se = _moment(X[:, half] * X[:, -1])
    exp = covariance(H, T / 2, T)
    report.check("fbm-covariance", _within(est, se, exp), estimate=est, standard_error=se, expected=exp,
                 s=T / 2, t=T, paths=n)

    B, jb = sample_matrix(0.5, grid, n, seed)
    report.provenance["jitter"] = max(report.provenance["jitter"], jb)
    rng = substream(seed, _STREAM_PAIRS)
    pairs = []
    for _ in range(5):
        i, j = sorted(rng.choice(np.arange(1, grid.points.size), size=2, replace=False))
        s, t = grid.points[i], grid.points[j]
        est, se = _moment(B[:, i] * B[:, j])
        pairs.append({"s": s, "t": t, "estimate": est, "standard_error": se, "expected": min(s, t),
                      "ok": _within(est, se, min(s, t))})
    report.check("brownian-degenerate", all(p["ok"] for p in pairs), pairs=pairs)

    Y = kernel_representation_matrix(H, grid, n, seed)
    ks = stats.ks_2samp(X[:, -1], Y[:, -1])
    report.check("representation-ks", ks.pvalue > 0.01, statistic=float(ks.statistic), pvalue=float(ks.pvalue),
                 level=0.01, paths=n)

    Q, jq = sample_qfbm_batch(sc.q, H, grid, seed, n)
    sq = np.sum(Q[:, -1, :] ** 2, axis=1)
    est, se = _moment(sq)
    exp = sc.q.trace * covariance(H, T, T)
    report.check("qfbm-trace", _within(est, se, exp), estimate=est, standard_error=se, expected=exp)
    report.summary.update(paths=n, grid_steps=_VALIDATION_STEPS, hurst=H.value)
    return []


# ------------------------------------------------------------ validate-evolution

def validate_evolution(sc: Scenario, report: RunReport) -> list:
    cfg = sc.config
    T, N = cfg.horizon, cfg.modes
    rng = substream(cfg.seed, _STREAM_PROBES)
    const = EvolutionFamily(TimeVaryingGenerator(N, Potential.constant(-sc.family.generator.gamma)))

    worst, exact = 0.0, True
    for _ in range(100):
        r, s, t = np.sort(rng.uniform(0.0, T, 3))
        x = rng.standard_normal(N)
        lhs = const.evolution_apply(t, s, const.evolution_apply(s, r, x)).coefficients
        rhs = const.evolution_apply(t, r, x).coefficients
        worst = max(worst, float(np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs)))
        exact &= bool(np.array_equal(const.evolution_apply(s, s, x).coefficients, x))
    report.check("composition", worst <= 1e-10, worst_relative_error=worst, tolerance=1e-10, triples=100)
    report.check("identity", exact, probes=100)

    probes = []
    for _ in range(100):
        s, t = np.sort(rng.uniform(0.0, T, 2))
        probes.append((t, s, rng.standard_normal(N)))
    stab = stability_margin(sc.family, probes, slack=1e-12)
    report.check("stability", stab.ok, worst_ratio=stab.worst_ratio, worst_normalized=stab.worst_normalized,
                 beta=sc.family.beta, M=sc.family.M, probes=stab.n_probes)

    rows = smoothing_check([0.01, 0.1, 1.0], N)
    report.check("smoothing", all(r[3] for r in rows),
                 rows=[{"delta": d, "sup": sup, "bound": b} for d, sup, b, _ in rows])

    one = EvolutionFamily(TimeVaryingGenerator(1, Potential.constant(-1.0)))
    g11 = ControlSystem(one, sc.grid, [1.0]).gramian[0, 0]
    exact_g = (1.0 - math.exp(-4.0 * T)) / 4.0
    rel = abs(g11 - exact_g) / exact_g
    report.check("gramian-mode-1", rel <= 1e-4, computed=g11, closed_form=exact_g, relative_error=rel)

    # second moment of the stochastic convolution against its bound
    n = cfg.n_paths
    grid = sc.grid
    times = [0.25 * T, 0.5 * T, T]
    idx = [grid.index_of(t) for t in times]
    sigma = sc.problem.sigma
    acc = np.zeros((n, len(idx)))
    chunk = 250
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        Q, jitter = sample_qfbm_batch(sc.q, sc.hurst, grid, cfg.seed, m, start=start)
        report.provenance["jitter"] = max(report.provenance.get("jitter", 0.0), jitter)
        for i in range(m):
            Z = stochastic_convolution_grid(sc.family, sigma, QfbmPath(grid, Q[i], sc.hurst, cfg.seed, start + i))
            acc[start + i] = np.sum(Z[idx] ** 2, axis=1)
    rows = []
    for c, t in enumerate(times):
        est, se = _moment(acc[:, c])
        bound = convolution_bound(sc.hurst, t, sc.family.M, sigma.bound)
        rows.append({"t": t, "estimate": est, "standard_error": se, "bound": bound, "ok": est + 3 * se <= bound})
    report.check("convolution-bound", all(r["ok"] for r in rows), rows=rows, paths=n)
    report.summary.update(beta=sc.family.beta, M=sc.family.M, sigma_bound=sigma.bound)
    return []


# ------------------------------------------------------------------ solve / steer

def _noise_pair(sc: Scenario, path_index: int):
    """(coarse noise, fine noise) for one path, or (None, None) without noise.

    The path is drawn on the refined grid and subsampled, so the coarse solve and
    the refined replay see the same realization.
    """
    if sc.problem.sigma.bound == 0.0:
        return None, None
    r = sc.config.refine_factor
    fine = sc.noise(path_index, sc.grid.refine(r))
    return fine.restrict(r), fine


def _trajectory_artifact(name, traj) -> Artifact:
    N = traj.values.shape[1]
    return Artifact(name, ["t"] + [f"mode_{n}" for n in range(1, N + 1)],
                    np.column_stack([traj.grid.points, traj.values]))


def _control_artifact(name, u) -> Artifact:
    N = u.values.shape[1]
    return Artifact(name, ["t"] + [f"mode_{n}" for n in range(1, N + 1)],
                    np.column_stack([u.grid.points, u.values]))


def solve(sc: Scenario, report: RunReport) -> list:
    cfg = sc.config
    p = sc.problem
    noise, _ = _noise_pair(sc, 0)
    traj, prep = picard_solve(p, sc.grid, None, noise, tol=cfg.tolerances["picard"], max_iter=cfg.tolerances["max_iter"])
    report.check("picard-converged", prep.converged, iterations=prep.iterations, tol=prep.tol)
    worst = []
    for w in prep.windows:
        ratios = w.squared_ratios()
        worst.append({"k0": w.k0, "k1": w.k1, "gamma": w.gamma, "max_squared_ratio": max(ratios, default=0.0)})
    report.check("contraction-rate", all(r["max_squared_ratio"] <= 1.1 * r["gamma"] for r in worst), windows=worst)
    c = p.constants
    g0 = contraction_constant(p, 0.0)
    report.check("gamma-zero", g0 == 6.0 * c.L_star**2 * c.M_star**2, gamma_0=g0,
                 expected=6.0 * c.L_star**2 * c.M_star**2)
    report.summary.update(picard=prep.as_dict(), terminal=traj.values[-1], noisy=noise is not None)
    zero = ControlSignal.zero(sc.grid, p.n_modes)
    return [_trajectory_artifact("trajectory", traj), _control_artifact("control", zero)]


def _steer_path(sc: Scenario, path_index: int) -> dict:
    cfg = sc.config
    tol = cfg.tolerances
    noise, fine = _noise_pair(sc, path_index)
    traj, u, rep = steer(sc.problem, sc.system, noise, tol=tol["steer"], max_outer=tol["max_outer"],
                         picard_tol=tol["picard"], max_iter=tol["max_iter"])
    fine_grid = None if fine is not None else sc.grid.refine(cfg.refine_factor)
    refined = refined_terminal_error(sc.problem, sc.system, u, fine, tol=tol["picard"], fine_grid=fine_grid)
    return {
        "path": path_index,
        "traj": traj,
        "control": u,
        "report": rep,
        "noise": noise,
        "refined": refined,
        "jitter": 0.0 if noise is None else noise.jitter,
    }


def steer_command(sc: Scenario, report: RunReport) -> list:
    cfg = sc.config
    tol = cfg.tolerances
    res = _steer_path(sc, 0)
    rep, u = res["report"], res["control"]
    report.provenance["jitter"] = res["jitter"]
    report.check("steer-converged", rep.converged, outer_iterations=rep.outer_iterations)
    report.check("terminal-error", rep.relative_terminal_error <= tol["terminal"],
                 relative_error=rep.relative_terminal_error, tolerance=tol["terminal"])
    replay, _ = picard_solve(sc.problem, sc.grid, u, res["noise"], tol=tol["picard"], max_iter=tol["max_iter"])
    scale = max(1.0, float(np.linalg.norm(sc.system.target.coefficients)))
    diff = float(np.linalg.norm(replay.values[-1] - res["traj"].values[-1]))
    report.check("replay-consistency", diff <= tol["steer"] * scale, terminal_difference=diff,
                 tolerance=tol["steer"] * scale)
    report.check("refined-terminal-error", res["refined"] <= tol["refined_terminal"],
                 relative_error=res["refined"], tolerance=tol["refined_terminal"], refine_factor=cfg.refine_factor)
    report.summary.update(steering=rep.as_dict(), refined_relative_error=res["refined"],
                          noisy=res["noise"] is not None, gramian_lambda_min=sc.system.lambda_min, M_w=sc.system.M_w)
    return [_trajectory_artifact("trajectory", res["traj"]), _control_artifact("control", u)]


# --------------------------------------------------------- mc-batch / convergence

_WORKER: dict = {}


def _worker_init(config_json: str):
    _WORKER["sc"] = parse_config(config_json).build()


def _mc_task(i: int) -> tuple:
    res = _steer_path(_WORKER["sc"], i)
    rep = res["report"]
    return (i, rep.relative_terminal_error, res["refined"], res["control"].energy, rep.outer_iterations,
            int(rep.converged), res["jitter"])


def _convergence_task(i: int) -> tuple:
    return (i,) + tuple(_convergence_path(_WORKER["sc"], i))


def _map(sc: Scenario, func, n: int, workers: int) -> list:
    if workers <= 1:
        _WORKER["sc"] = sc
        return [func(i) for i in range(n)]
    with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init,
                             initargs=(sc.config.to_json(),)) as ex:
        return list(ex.map(func, range(n), chunksize=max(1, n // (4 * workers))))


def mc_batch(sc: Scenario, report: RunReport, workers: int = 1) -> list:
    cfg = sc.config
    tol = cfg.tolerances
    rows = np.array(_map(sc, _mc_task, cfg.n_paths, workers), dtype=np.float64)
    grid_err, refined, energy = rows[:, 1], rows[:, 2], rows[:, 3]
    report.provenance["jitter"] = float(rows[:, 6].max())
    report.check("all-converged", bool(np.all(rows[:, 5] == 1)), paths=cfg.n_paths)
    report.check("terminal-error", bool(np.all(grid_err <= tol["terminal"])), max_relative_error=grid_err.max(),
                 tolerance=tol["terminal"])
    report.check("refined-terminal-error", bool(np.all(refined <= tol["refined_terminal"])),
                 max_relative_error=refined.max(), median_relative_error=float(np.median(refined)),
                 failures=int(np.sum(refined > tol["refined_terminal"])), tolerance=tol["refined_terminal"])
    report.summary.update(paths=cfg.n_paths, median_refined_error=float(np.median(refined)),
                          max_refined_error=float(refined.max()), mean_energy=float(energy.mean()),
                          max_outer_iterations=int(rows[:, 4].max()))
    header = ["path", "grid_relative_error", "refined_relative_error", "control_energy", "outer_iterations",
              "converged"]
    return [Artifact("paths", header, rows[:, :6])]


def _levels(cfg: ScenarioConfig) -> list:
    K = cfg.steps
    return [K // 2, K, 2 * K]


def _convergence_path(sc: Scenario, i: int) -> list:
    cfg = sc.config
    tol = cfg.tolerances
    levels = _levels(cfg)
    ref = TimeGrid.uniform(cfg.horizon, cfg.steps * cfg.refine_factor)
    fine = None if sc.problem.sigma.bound == 0.0 else sc.noise(i, ref)
    out = []
    for K in levels:
        grid = TimeGrid.uniform(cfg.horizon, K)
        system = sc.control_system(grid)
        noise = None if fine is None else fine.restrict(ref.n_steps // K)
        _, u, _ = steer(sc.problem, system, noise, tol=tol["steer"], max_outer=tol["max_outer"],
                        picard_tol=tol["picard"], max_iter=tol["max_iter"])
        out.append(refined_terminal_error(sc.problem, system, u, fine, tol=tol["picard"], fine_grid=ref))
    return out


def convergence_study(sc: Scenario, report: RunReport, workers: int = 1) -> list:
    """Refined terminal miss at K/2, K, 2K steps against a reference grid of K * refine_factor steps."""
    cfg = sc.config
    levels = _levels(cfg)
    if cfg.refine_factor < 4:
        raise ValueError("convergence-study needs refine_factor >= 4 so the reference grid is finer than 2K")
    rows = np.array(_map(sc, _convergence_task, cfg.n_paths, workers), dtype=np.float64)
    med = np.median(rows[:, 1:], axis=0)
    ratios = med[:-1] / med[1:]
    report.check("step-halving", bool(np.all(ratios >= 1.5)), medians=dict(zip(map(str, levels), med)),
                 ratios=ratios, observed_order=np.log2(ratios), minimum_ratio=1.5)
    report.summary.update(levels=levels, reference_steps=cfg.steps * cfg.refine_factor, paths=cfg.n_paths,
                          median_errors=med)
    return [Artifact("convergence", ["path"] + [f"K_{K}" for K in levels], rows)]


COMMANDS = {
    "validate-noise": validate_noise,
    "validate-evolution": validate_evolution,
    "solve": solve,
    "steer": steer_command,
    "mc-batch": mc_batch,
    "convergence-study": convergence_study,
}


def run(command: str, config: ScenarioConfig, workers: int = 1):
    """Execute one pipeline; returns (RunReport, list of Artifacts).

    Module errors propagate to the caller unchanged.
    """
    if command not in COMMANDS:
        raise ValueError(f"unknown command {command!r}; choose from {sorted(COMMANDS)}")
    sc = config.build()
    report = RunReport(command, config.to_dict())
    report.provenance.update(seed=config.seed, version=__version__, jitter=0.0,
                             backend="numba" if USING_NUMBA else "numpy")
    func = COMMANDS[command]
    if command in ("mc-batch", "convergence-study"):
        artifacts = func(sc, report, workers=max(1, int(workers)))
    else:
        artifacts = func(sc, report)
    report.summary.setdefault("notes", sc.notes)
    return report, artifacts
