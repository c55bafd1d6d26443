"""Command-line entry point: ``bohmcollapse {run,ensemble,resume,pheno}``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from . import phenomenology as ph
from .config import EMIT_MODES, load_config
from .errors import CheckpointError, ConfigError, NumericalFailure
from .runner import resume, run_ensemble, run_single

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4

log = logging.getLogger("bohmcollapse")

PARAMETER_SETS = ((1e-24, 1e-6), (1e-16, 1e-5))


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="override the configured seed")
    p.add_argument("--out-dir", default=None, help="override output.directory")
    p.add_argument("--workers", type=int, default=1, help="worker processes for ensembles")
    p.add_argument("--emit", choices=EMIT_MODES, default=None, help="time-series format")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bohmcollapse",
                                     description="Bohmian-density collapse simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run one trajectory")
    p.add_argument("config")
    _common(p)
    p = sub.add_parser("ensemble", help="run an ensemble and report outcome statistics")
    p.add_argument("config")
    _common(p)
    p = sub.add_parser("resume", help="continue a run from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--config", default=None, help="configuration to continue with")
    _common(p)
    p = sub.add_parser("pheno", help="print closed-form rate estimates")
    p.add_argument("--gamma", type=float, nargs="+", default=None, help="gamma_L values [1/s]")
    p.add_argument("--a-L", type=float, nargs="+", default=None, help="a_L values [m]")
    p.add_argument("--N", type=float, nargs="+", default=[1e12], help="particle numbers")
    p.add_argument("--n", type=float, nargs="+", default=[1e30], help="densities [1/m^3]")
    p.add_argument("--l", type=float, nargs="+", default=[1e-6], help="object sizes [m]")
    p.add_argument("--format", choices=("text", "json"), default="text")
    return parser


def _load(args):
    cfg = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out_dir is not None:
        changes["out_dir"] = args.out_dir
    if args.emit is not None:
        changes["emit"] = args.emit
    return dataclasses.replace(cfg, **changes) if changes else cfg


def _pheno(args) -> int:
    if args.gamma is None and args.a_L is None:
        rows = []
        for g, a in PARAMETER_SETS:
            rows += ph.table([g], [a], args.N, args.n, args.l)
    else:
        rows = ph.table(args.gamma or [1e-24], args.a_L or [1e-6], args.N, args.n, args.l)
    if args.format == "json":
        print(json.dumps(rows, indent=2))
        return EXIT_OK
    cols = list(rows[0])
    print("  ".join(f"{c:>17}" for c in cols))
    for r in rows:
        print("  ".join(f"{'-' if r[c] is None else format(r[c], '.6g'):>17}" for c in cols))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "pheno":
            return _pheno(args)
        if args.workers < 1:
            raise ConfigError("--workers", "must be >= 1")
        if args.command == "run":
            cfg = _load(args)
            out = run_single(cfg, out_dir=cfg.out_dir)
            print(json.dumps({"outcome": out.summary["outcome"],
                              "collapse_time": out.summary["collapse_time"],
                              "out_dir": cfg.out_dir}))
            return EXIT_OK
        if args.command == "ensemble":
            cfg = _load(args)
            res = run_ensemble(cfg, out_dir=cfg.out_dir, workers=args.workers)
            print(json.dumps({"counts": res.summary["counts"],
                              "failures": len(res.failures), "out_dir": cfg.out_dir}))
            return EXIT_NUMERICAL if res.failures else EXIT_OK
        if args.command == "resume":
            cfg = None
            if args.config is not None:
                cfg = _load(args)
            out = resume(args.checkpoint, cfg, out_dir=args.out_dir, emit=args.emit)
            print(json.dumps({"outcome": out.summary["outcome"],
                              "collapse_time": out.summary["collapse_time"]}))
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (CheckpointError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    parser.error(f"unknown command {args.command}")
    return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
