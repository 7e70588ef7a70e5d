"""Command-line entry point: ``alereact run|list|describe|report``.

Each step of ``run`` solves the coupled fluid/interface system on the
current mesh, moves the mesh by the elastic extension of the interface
displacement, then solves the species system on the moved mesh.

Scenario files use the sectioned key-value grammar documented in
:mod:`alereact.config`; ``--set section.key=value`` overrides single keys.
Outputs in ``--out``: ``diagnostics.csv`` (RFC-4180, 15 significant digits),
``snapshots/bulk_*.vtk`` and ``snapshots/interface_*.vtk`` (legacy VTK text),
``checkpoint.npz`` (restart with ``--restart``) and a copy of the scenario.
On failure a JSON line ``{"error", "status", "last_step", "message"}`` is
printed to stderr and the process exits with a module-specific status.
"""
from __future__ import annotations

import argparse
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

from .config import PRESETS, describe, load_scenario
from .errors import AleReactError, exit_status


def _scenario(args, extra=()):
    overrides = list(args.set or []) + list(extra)
    if getattr(args, "dt", None) is not None:
        overrides.append(f"time.dt={args.dt}")
    if getattr(args, "until", None) is not None:
        overrides.append(f"time.t_end={args.until}")
    if getattr(args, "snapshot_every", None) is not None:
        overrides.append(f"output.snapshot_every={args.snapshot_every}")
    if args.config is None and args.scenario is None:
        raise SystemExit("one of --config or --scenario is required")
    return load_scenario(path=args.config, preset=args.scenario, overrides=overrides)


def _add_source(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--config", type=Path, help="scenario file")
    g.add_argument("--scenario", choices=PRESETS, help="built-in scenario")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one key")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="alereact", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario")
    _add_source(run)
    run.add_argument("--out", type=Path, required=True, help="output directory")
    run.add_argument("--until", type=float, help="final time (default: scenario t_end)")
    run.add_argument("--dt", type=float, help="time step")
    run.add_argument("--snapshot-every", type=int, help="VTK snapshot interval in steps (0 = off)")
    run.add_argument("--checkpoint-every", type=int, default=0, help="checkpoint interval in steps")
    run.add_argument("--threads", type=int, default=1, help="BLAS/LAPACK thread count")
    run.add_argument("--check", action="store_true", help="check invariants after every step")
    run.add_argument("--restart", type=Path, help="continue from a checkpoint.npz")
    run.add_argument("--report", action="store_true", help="render figures after the run")

    sub.add_parser("list", help="list built-in scenarios")

    desc = sub.add_parser("describe", help="summarise a scenario")
    _add_source(desc)

    rep = sub.add_parser("report", help="render figures from a diagnostics CSV")
    rep.add_argument("csv", type=Path)
    rep.add_argument("--out", type=Path)
    return ap


def _run_one(sc, args, out: Path) -> None:
    from .runner import Simulation

    sim = Simulation(sc, check=args.check)
    resume = False
    if args.restart is not None:
        sim.load_checkpoint(args.restart)
        resume = True
    out.mkdir(parents=True, exist_ok=True)
    try:
        sim.run(out_dir=out, checkpoint_every=args.checkpoint_every, resume=resume)
    finally:
        logging.getLogger(__name__).info("%s: stopped at step %d, t=%.6g", sc.name, sim.step_index, sim.t)
    if args.report:
        from .plotting import report
        report(out / "diagnostics.csv")


def cmd_run(args) -> int:
    from threadpoolctl import threadpool_limits

    sc = _scenario(args)
    variants = sc.variants()
    limit = threadpool_limits(limits=args.threads) if args.threads else nullcontext()
    with limit:
        for suffix, variant in variants:
            out = args.out / suffix if suffix else args.out
            _run_one(variant, args, out)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "list":
            for name in PRESETS:
                sc = load_scenario(preset=name)
                print(f"{name:20s} {sc.description}")
            return 0
        if args.command == "describe":
            print(describe(_scenario(args)))
            return 0
        if args.command == "report":
            from .plotting import report
            for p in report(args.csv, args.out):
                print(p)
            return 0
        return cmd_run(args)
    except AleReactError as exc:
        from .runner import error_report
        print(error_report(exc, getattr(exc, "last_step", -1)), file=sys.stderr)
        return exit_status(getattr(exc, "cause", exc))


if __name__ == "__main__":
    sys.exit(main())
