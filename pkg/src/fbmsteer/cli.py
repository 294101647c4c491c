"""Command-line entry point: ``fbmsteer --command steer --config scenario.json``.

Output directory precedence: ``--out`` > ``$FBMSTEER_OUTPUT_DIR`` > the config's
``output_dir``.  Files land in the directory only when the run completes; on
error nothing is left behind.  Exit status is 0 iff every suite check passed.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import shutil
import sys
import tempfile

import numpy as np

from .errors import ConfigError
from .harness import COMMANDS, run
from .scenario import default_config_text, parse_config

OUTPUT_ENV = "FBMSTEER_OUTPUT_DIR"

EXIT_OK, EXIT_FAILED, EXIT_ERROR = 0, 1, 2

log = logging.getLogger("fbmsteer")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fbmsteer", description=__doc__.splitlines()[0])
    p.add_argument("--command", required=True, choices=sorted(COMMANDS))
    p.add_argument("--config", help="scenario JSON (default: the shipped default scenario)")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--paths", type=int, help="override the number of Monte Carlo paths")
    p.add_argument("--out", help="output directory")
    p.add_argument("--tol", type=float, help="override the steering tolerance")
    p.add_argument("--workers", type=int, default=1, help="worker processes for mc-batch and convergence-study")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def resolve_config(args):
    """Parse the scenario and fold command-line overrides into it (they are echoed in the report)."""
    if args.config:
        with open(args.config) as fh:
            text = fh.read()
    else:
        text = default_config_text()
    cfg = parse_config(text)
    changes = {}
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2**64:
            raise ConfigError(["--seed must be an unsigned 64-bit integer"])
        changes["seed"] = args.seed
    if args.paths is not None:
        changes["n_paths"] = args.paths
    if args.tol is not None:
        changes["tolerances"] = {"steer": args.tol}
    return cfg.replace(**changes) if changes else cfg


def resolve_output_dir(args, cfg) -> str:
    return args.out or os.environ.get(OUTPUT_ENV) or cfg.output_dir


def _write_csv(path: str, header, rows) -> None:
    np.savetxt(path, np.asarray(rows, dtype=np.float64), delimiter=",", header=",".join(header),
               comments="", fmt="%.17g")


def emit(report, artifacts, out_dir: str) -> list[str]:
    """Write artifacts and the JSON report atomically into ``out_dir``; returns the final paths."""
    os.makedirs(out_dir, exist_ok=True)
    staging = tempfile.mkdtemp(prefix=".partial-", dir=out_dir)
    try:
        names = []
        for art in artifacts:
            _write_csv(os.path.join(staging, f"{art.name}.csv"), art.header, art.rows)
            names.append(f"{art.name}.csv")
        doc = report.as_dict()
        doc["meta"] = {"timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(), "output_dir": out_dir}
        with open(os.path.join(staging, "report.json"), "w") as fh:
            json.dump(doc, fh, indent=2, allow_nan=True)
            fh.write("\n")
        names.append("report.json")
        final = []
        for name in names:
            dest = os.path.join(out_dir, name)
            os.replace(os.path.join(staging, name), dest)
            final.append(dest)
        return final
    finally:
        shutil.rmtree(staging, ignore_errors=True)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        lines = "\n".join(f"  - {v}" for v in exc.violations)
        print(f"fbmsteer: invalid configuration:\n{lines}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"fbmsteer: cannot read config: {exc}", file=sys.stderr)
        return EXIT_ERROR
    out_dir = resolve_output_dir(args, cfg)
    try:
        report, artifacts = run(args.command, cfg, workers=args.workers)
        paths = emit(report, artifacts, out_dir)
    except Exception as exc:  # every module error is reported with its context
        print(f"fbmsteer: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for s in report.suites:
        log.info("%-24s %s", s["name"], "pass" if s["passed"] else "FAIL")
    log.info("wrote %s", ", ".join(paths))
    return EXIT_OK if report.passed else EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
