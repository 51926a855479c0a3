"""Command line: ``overdrive simulate | preset NAME | check``.

Exit codes: 0 success, 1 runtime/model error, 2 configuration error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, load
from .core import ParameterError, UnknownPreset
from .harness import EC, NO, Scenario

log = logging.getLogger("overdrive")

MODE_ALIASES = {"ec": EC, "no": NO, EC: EC, NO: NO}


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat TOML scenario file")
    common.add_argument("--out-dir", type=Path, default=None,
                        help="output directory (default $OVERDRIVE_OUT_DIR or ./out)")
    common.add_argument("--dt", type=float, help="integration step, s")
    common.add_argument("--method", choices=["enumerate", "sqp"], help="Level-2 solver")
    common.add_argument("--dynamics", choices=["corrected", "paper-literal"], help="inertia denominators")
    common.add_argument("--duration", type=float,
                        help="override the run duration (and the battery-run cap), s")
    common.add_argument("--workers", type=int, default=None, help="processes for sweeps")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="overdrive", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    sim = sub.add_parser("simulate", parents=[common], help="run one scenario")
    sim.add_argument("--mode", help="energy_conscious | no_optimization (or ec | no)")
    pre = sub.add_parser("preset", parents=[common], help="regenerate a published table or figure")
    pre.add_argument("name", help="table2, fig4a, fig4b, fig6, fig7, fig8, fig9, motor_surface")
    sub.add_parser("check", parents=[common], help="fast invariant suite")
    return ap


def _scenario(args) -> Scenario:
    sc = load(args.config) if args.config else Scenario()
    if args.dt is not None:
        sc = replace(sc, dt=args.dt)
    if args.method:
        sc = replace(sc, method=args.method)
    if args.dynamics:
        sc = replace(sc, literal=args.dynamics == "paper-literal")
    if args.duration is not None:
        sc = replace(sc, duration=args.duration)
    if getattr(args, "mode", None):
        if args.mode not in MODE_ALIASES:
            raise ConfigError(f"unknown mode {args.mode!r}", key="mode")
        sc = replace(sc, mode=MODE_ALIASES[args.mode])
    try:
        sc.validate()
    except ParameterError:
        raise
    except ValueError as exc:  # scenario-level settings
        raise ConfigError(str(exc)) from None
    return sc


def _out_dir(args) -> Path:
    out = args.out_dir or Path(os.environ.get("OVERDRIVE_OUT_DIR", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    from .harness import run
    from .presets import provenance, write_run

    sc = _scenario(args)
    out = _out_dir(args)
    t = time.perf_counter()
    m = run(sc)
    files = write_run(sc, m, out, comment=provenance("simulate", sc))
    print(f"{sc.mode}: energy {m.energy / 1e3:.3f} kJ, distance {m.distance / 1e3:.3f} km, "
          f"mileage {m.mileage:.4f} m/J, active {m.steady_count()} ({time.perf_counter() - t:.1f} s)")
    for f in files:
        log.info("wrote %s", f)
    return 0


def cmd_preset(args) -> int:
    from .presets import run_preset

    sc = _scenario(args)
    out = _out_dir(args)
    t = time.perf_counter()
    files = run_preset(args.name, sc, out, args.workers, battery_cap=args.duration)
    for f in files:
        print(f"wrote {f}")
    log.info("%s finished in %.1f s", args.name, time.perf_counter() - t)
    return 0


def cmd_check(args) -> int:
    from .checks import run_checks

    try:
        sc = _scenario(args)
    except ParameterError:
        # surface invalid parameters as a failed property rather than a config error
        sc = load(args.config)
    results = run_checks(sc)
    for r in results:
        line = f"{'PASS' if r.passed else 'FAIL'}  {r.name}"
        if args.verbose or not r.passed:
            line += f"  [{r.value}]"
        print(line)
    return 0 if all(r.passed for r in results) else 1


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    handler = {"simulate": cmd_simulate, "preset": cmd_preset, "check": cmd_check}[args.command]
    try:
        return handler(args)
    except (ConfigError, ParameterError, UnknownPreset) as exc:
        msg = f"unknown preset {exc.args[0]!r}" if isinstance(exc, UnknownPreset) else str(exc)
        print(f"configuration error: {msg}", file=sys.stderr)
        return 2
    except Exception as exc:  # model/runtime failures
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
