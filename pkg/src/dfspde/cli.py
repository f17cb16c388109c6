"""Command line entry point: ``dfspde {simulate,ensemble,verify,extinction-scan}``.

Exit codes: 0 success, 1 a verification suite failed, 2 invalid input
(config, CFL bound, unknown suite, empty or out-of-range scan), 3 a run
aborted (truncation breach, blow-up, too many failed replicas).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .config import ConfigError, RunConfig
from .diagnostics import mass_martingale_test, write_jsonl
from .errors import DomainError, EnsembleAbort, NumericalBlowup, PreconditionError, TruncationBreach
from .integrator import _fmt, run, run_ensemble, write_snapshots_csv
from .mass_sde import classify_extinction, write_verdicts_csv
from .noise import SeedSpec

log = logging.getLogger("dfspde")

EXIT_FAIL, EXIT_INPUT, EXIT_ABORT = 1, 2, 3
SCAN_RANGE = (0.0, 3.0)


def _load(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.ensemble = replace(cfg.ensemble, master_seed=args.seed)
    if getattr(args, "replicas", None) is not None:
        cfg.ensemble = replace(cfg.ensemble, replicas=args.replicas)
    if getattr(args, "out", None) is not None:
        cfg.output = replace(cfg.output, dir=args.out)
    cfg.validate()
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    d = Path(cfg.output.dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        v = v.item()
    if isinstance(v, float):
        return v if math.isfinite(v) else str(v)
    raise TypeError(f"not JSON serializable: {type(v).__name__}")


def _clean(v):
    """Replace non-finite floats so the JSON stays standard."""
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    return v


def cmd_simulate(args) -> int:
    cfg = _load(args)
    model, grid = cfg.build_model(), cfg.build_grid()
    Y0 = cfg.build_initial(model, grid)
    seed = SeedSpec(cfg.ensemble.master_seed, 0)
    out = _out_dir(cfg)
    rec = run(Y0, model, cfg.scheme(), seed, cfg.time.t_end)
    with open(out / "mass.csv", "w") as fh:
        fh.write("t,mass\n")
        fh.write("".join(f"{_fmt(t)},{_fmt(m)}\n" for t, m in zip(rec.times, rec.mass)))
    write_snapshots_csv(rec, out / "snapshots.csv")
    _write_json(out / "run_meta.json", {
        "config": cfg.to_dict(), "config_hash": cfg.content_hash(),
        "master_seed": cfg.ensemble.master_seed, "replica": 0, "steps": rec.n_steps,
        "version": __version__, "backend": kernels.backend(),
    })
    log.info("simulate: %d steps, terminal mass %.6g -> %s", rec.n_steps, rec.mass[-1], out)
    return 0


def cmd_ensemble(args) -> int:
    cfg = _load(args)
    model, grid = cfg.build_model(), cfg.build_grid()
    Y0 = cfg.build_initial(model, grid)
    out = _out_dir(cfg)
    reps = cfg.ensemble.replicas
    try:
        summ = run_ensemble(Y0, model, cfg.scheme(), cfg.ensemble.master_seed, reps, cfg.time.t_end)
        status = 0
    except EnsembleAbort as exc:
        summ = exc.summary
        log.error("ensemble: %s", exc)
        status = EXIT_ABORT
    reasons = dict(summ.aborted)
    with open(out / "replicas.csv", "w") as fh:
        fh.write("replica,terminal_mass,status\n")
        for r in range(reps):
            fh.write(f"{r},{_fmt(summ.terminal_mass[r])},{'aborted' if r in reasons else 'ok'}\n")
    try:
        mt = mass_martingale_test(summ, Y0.total_mass)
        martingale = {"target": mt.target, "mean": mt.mean, "se": mt.se, "z": mt.z, "pass": mt.passed,
                      "n": mt.n}
    except PreconditionError as exc:
        martingale = {"skipped": str(exc)}
    _write_json(out / "summary.json", _clean({
        "config_hash": cfg.content_hash(), "master_seed": cfg.ensemble.master_seed,
        "replicas": reps, "completed": summ.completed, "aborted": [list(a) for a in summ.aborted],
        "mean": summ.mean, "se": summ.se, "extinct_fraction": summ.extinct_fraction,
        "mass_floor": summ.mass_floor, "projection_mean": summ.projection_mean,
        "martingale": martingale,
    }))
    log.info("ensemble: %d/%d replicas, mean %.6g +- %.3g", summ.completed, reps, summ.mean, summ.se)
    return status


def cmd_verify(args) -> int:
    from .suites import SUITES, run_suite

    if args.suite not in SUITES:
        print(f"unknown suite {args.suite!r}; choose from {', '.join(SUITES)}", file=sys.stderr)
        return EXIT_INPUT
    reports = run_suite(args.suite, quick=args.quick)
    if args.out:
        with open(args.out, "w") as fh:
            write_jsonl(reports, fh)
    write_jsonl(reports)
    return 0 if all(r["pass"] for r in reports) else EXIT_FAIL


def _gamma_grid(args) -> list[float]:
    if args.range is not None:
        start, stop, stepsize = args.range
        if stepsize <= 0:
            raise DomainError(f"range step must be positive, got {stepsize}")
        n = int(math.floor((stop - start) / stepsize + 1e-9)) + 1
        grid = [start + i * stepsize for i in range(max(0, n))]
    else:
        grid = list(args.gamma_prime or [])
    if not grid:
        raise DomainError("empty gamma_prime range")
    lo, hi = SCAN_RANGE
    bad = [g for g in grid if not (lo <= g <= hi)]
    if bad:
        raise DomainError(f"gamma_prime values must lie in [{lo:g}, {hi:g}], got {bad}")
    return grid


def cmd_extinction_scan(args) -> int:
    grid = _gamma_grid(args)
    if args.config:
        cfg = _load(args)
        z0, T, dt = cfg.initial.mass, cfg.time.t_end, cfg.time.dt
        reps, seed, out = cfg.ensemble.replicas, cfg.ensemble.master_seed, Path(cfg.output.dir)
    else:
        z0, T, dt, reps = 1.0, 20.0, 1e-3, 2000
        seed = 0 if args.seed is None else args.seed
        reps = reps if args.replicas is None else args.replicas
        out = Path(args.out or "out")
    if reps < 1:
        raise DomainError(f"replicas must be >= 1, got {reps}")
    out.mkdir(parents=True, exist_ok=True)
    verdicts = classify_extinction(grid, z0, T, dt, reps, seed)
    write_verdicts_csv(verdicts, out / "verdicts.csv")
    for v in verdicts:
        log.info("gamma'=%g extinct %.4f +- %.4f (%s)", v.gamma_prime, v.extinct_fraction, v.se, v.verdict)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dfspde", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    verbose = argparse.ArgumentParser(add_help=False)
    verbose.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, replicas=True):
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        if replicas:
            sp.add_argument("--replicas", type=int, help="replica count (overrides the config)")
        sp.add_argument("--out", help="output directory (overrides the config)")

    sp = sub.add_parser("simulate", parents=[verbose], help="run one trajectory")
    common(sp, replicas=False)
    sp.set_defaults(func=cmd_simulate)
    sp = sub.add_parser("ensemble", parents=[verbose], help="run independent replicas")
    common(sp)
    sp.set_defaults(func=cmd_ensemble)
    sp = sub.add_parser("verify", parents=[verbose], help="run a verification suite, print JSONL")
    sp.add_argument("--suite", required=True)
    sp.add_argument("--quick", action="store_true", help="reduced replica counts (smoke test)")
    sp.add_argument("--out", help="also write the JSONL report here")
    sp.set_defaults(func=cmd_verify)
    sp = sub.add_parser("extinction-scan", parents=[verbose], help="extinct fractions over a gamma' grid")
    common(sp)
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--gamma-prime", type=float, nargs="*", help="explicit gamma' values")
    g.add_argument("--range", type=float, nargs=3, metavar=("START", "STOP", "STEP"))
    sp.set_defaults(func=cmd_extinction_scan)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, DomainError, PreconditionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (TruncationBreach, NumericalBlowup, EnsembleAbort) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
