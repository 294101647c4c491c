"""Compare the numba and numpy convolution kernels, then time one default steer per backend.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5] [--sizes 512,4096]

The end-to-end row for the numpy backend runs in a subprocess with
FBMSTEER_DISABLE_NUMBA=1, since the backend is fixed at import time.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from fbmsteer import _kernels


def kernel_inputs(K: int, N: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    step = np.exp(-rng.uniform(0.0, 1.0, (K, N)) / K)
    h = rng.standard_normal((K + 1, N))
    dt = np.full(K, 1.0 / K)
    dB = rng.standard_normal((K, N)) * K**-0.75
    return step, h, dt, dB


def best_of(func, repeat: int) -> float:
    func()  # warm up (and compile)
    return min(timeit.repeat(func, number=1, repeat=repeat))


def bench_kernels(sizes, modes: int, repeat: int) -> list[dict]:
    rows = []
    for K in sizes:
        step, h, dt, dB = kernel_inputs(K, modes)
        for name in ("trapz", "left"):
            arg = dt if name == "trapz" else dB
            row = {"kernel": name, "K": K, "N": modes}
            row["numpy_s"] = best_of(lambda: getattr(_kernels, f"{name}_convolution_numpy")(step, h, arg), repeat)
            fast = getattr(_kernels, f"{name}_convolution_numba", None)
            row["numba_s"] = best_of(lambda: fast(step, h, arg), repeat) if fast is not None else None
            rows.append(row)
    return rows


def steer_seconds() -> float:
    """Wall time of one steer on the default scenario (path 0), after a warm-up solve."""
    from fbmsteer.harness import run
    from fbmsteer.scenario import default_config_text, parse_config

    cfg = parse_config(default_config_text())
    run("solve", cfg.replace(grid={"K": 16}))
    return min(timeit.repeat(lambda: run("steer", cfg), number=1, repeat=3))


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", default="512,4096,32768", help="comma-separated grid sizes K")
    p.add_argument("--modes", type=int, default=8)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--steer-only", action="store_true", help=argparse.SUPPRESS)
    args = p.parse_args(argv)

    if args.steer_only:
        print(json.dumps({"backend": "numba" if _kernels.USING_NUMBA else "numpy", "steer_s": steer_seconds()}))
        return 0

    sizes = [int(s) for s in args.sizes.split(",")]
    print(f"{'kernel':<6} {'K':>6} {'N':>3} {'numpy [ms]':>11} {'numba [ms]':>11} {'speedup':>8}")
    for r in bench_kernels(sizes, args.modes, args.repeat):
        nb = r["numba_s"]
        fast = f"{1e3 * nb:11.3f}" if nb is not None else f"{'n/a':>11}"
        speed = f"{r['numpy_s'] / nb:8.1f}" if nb else f"{'n/a':>8}"
        print(f"{r['kernel']:<6} {r['K']:>6} {r['N']:>3} {1e3 * r['numpy_s']:11.3f} {fast} {speed}")

    print("\nend-to-end steer, default scenario (512 steps, 8 modes, refined replay on 4096 steps)")
    for disable in ("", "1"):
        env = dict(os.environ, FBMSTEER_DISABLE_NUMBA=disable)
        out = subprocess.run([sys.executable, __file__, "--steer-only"], env=env, capture_output=True, text=True,
                             check=True)
        res = json.loads(out.stdout)
        print(f"  {res['backend']:<6} {res['steer_s']:.3f} s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
