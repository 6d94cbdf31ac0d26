"""Command-line entry point: ``phasefrac run | list-scenarios | check``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import io
from .driver import Simulation, StepFailure
from .mmpde import MeshTanglingError
from .scenarios import (ConfigError, builtin_scenario, parse_config, scenario_names,
                        write_config)

OUTPUT_ROOT_ENV = "PHASEFRAC_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "phasefrac-output"

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_OUTPUT, EXIT_SOLVER = 0, 1, 2, 3, 4

log = logging.getLogger("phasefrac")


class UsageError(Exception):
    pass


def _on_off(value: str) -> str:
    v = value.lower()
    if v not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected on or off, got {value!r}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phasefrac", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="log progress (-v) or solver detail (-vv)")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario")
    run.add_argument("--scenario", required=True, choices=scenario_names())
    run.add_argument("--config", type=Path, help="INI file layered over the built-in scenario")
    run.add_argument("--split", choices=["spectral", "vd", "ivd", "isotropic"])
    run.add_argument("--itcbc", type=_on_off, help="critically damaged zone treatment")
    run.add_argument("--dcr", type=float, help="critical damage value (turns the treatment on)")
    run.add_argument("--mesh", type=int, nargs=2, metavar=("NX", "NY"),
                     help="rectangle subdivisions (each split into four triangles)")
    run.add_argument("--l", type=float, help="length scale l (mm)")
    run.add_argument("--kl", type=float, help="residual stiffness k_l")
    run.add_argument("--alpha", type=float, help="eigenvalue smoothing parameter")
    run.add_argument("--tau", type=float, help="mesh-flow time scale")
    run.add_argument("--kk", type=int, help="phase solve / mesh move iterations per step")
    run.add_argument("--moving-mesh", type=_on_off)
    run.add_argument("--steps", type=int, help="number of load steps")
    run.add_argument("--out", type=Path, help=f"output directory (default ${OUTPUT_ROOT_ENV}/<scenario>)")
    run.add_argument("--snapshot-every", type=int, help="write fields every N steps")
    run.add_argument("--overwrite", action="store_true", help="allow a non-empty output directory")
    run.add_argument("--mmpde-diagnostics", action="store_true", help="also write mmpde.csv")

    sub.add_parser("list-scenarios", help="list the built-in scenarios")
    sub.add_parser("check", help="run the numerical self-test")
    return parser


def overrides_from_args(args) -> dict[str, dict[str, str]]:
    """Translate CLI flags into config-file style overrides."""
    if args.itcbc == "off" and args.dcr is not None:
        raise UsageError("--dcr conflicts with --itcbc off")
    o: dict[str, dict[str, str]] = {}

    def put(section, key, value):
        if value is not None:
            o.setdefault(section, {})[key] = str(value)

    put("model", "split", args.split)
    put("model", "itcbc", args.itcbc)
    if args.dcr is not None:
        put("model", "d_cr", repr(args.dcr))
        put("model", "itcbc", "on")
    if args.mesh is not None:
        put("mesh", "nx", args.mesh[0])
        put("mesh", "ny", args.mesh[1])
    put("material", "l", args.l)
    put("material", "k_l", args.kl)
    put("material", "alpha", args.alpha)
    put("mmpde", "tau", args.tau)
    put("mmpde", "kk", args.kk)
    put("mmpde", "moving_mesh", args.moving_mesh)
    put("load", "steps", args.steps)
    put("output", "snapshot_every", args.snapshot_every)
    if args.overwrite:
        put("output", "overwrite", "on")
    if args.mmpde_diagnostics:
        put("output", "mmpde_diagnostics", "on")
    return o


def output_dir(args, cfg) -> Path:
    if args.out is not None:
        return args.out
    if cfg.out_dir:
        return Path(cfg.out_dir)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT)) / cfg.name


def cmd_run(args) -> int:
    cfg = parse_config(args.config, overrides_from_args(args), scenario=args.scenario)
    out = output_dir(args, cfg)
    cfg = cfg.replace(out_dir=str(out))
    io.prepare_output_dir(out, overwrite=cfg.overwrite)
    write_config(cfg, out / "config.ini")

    sim = Simulation(cfg)
    with io.CsvStream(out / "load_deflection.csv", io.LOAD_DEFLECTION_HEADER) as ld:
        mm = io.CsvStream(out / "mmpde.csv", io.MMPDE_HEADER) if cfg.mmpde_diagnostics else None
        try:
            def on_step(state, rec):
                ld.write(io.load_deflection_row(rec))
                if mm is not None:
                    mm.write(io.mmpde_row(rec))

            result = sim.run(callback=on_step, on_snapshot=lambda s: io.write_snapshot(out, s))
        finally:
            if mm is not None:
                mm.close()
    if result.failure is not None:
        raise result.failure
    n = len(result.records)
    print(f"{cfg.name}: {n} steps, final U = {result.state.U:.6g} mm, output in {out}")
    return EXIT_OK


def cmd_list() -> int:
    for name in scenario_names():
        cfg = builtin_scenario(name)
        x0, y0, x1, y1 = cfg.domain
        print(f"{name:12s} {cfg.bc_template:16s} {x1 - x0:g} x {y1 - y0:g} mm, "
              f"{cfg.nx}x{cfg.ny} cells, {len(cfg.cracks)} crack(s)")
    return EXIT_OK


def cmd_check() -> int:
    from .selfcheck import run_checks

    results = run_checks()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_ERROR


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "list-scenarios":
            return cmd_list()
        if args.command == "check":
            return cmd_check()
        return cmd_run(args)
    except (UsageError, ConfigError) as exc:
        print(f"phasefrac: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (io.OutputExistsError, PermissionError) as exc:
        print(f"phasefrac: error: {exc}", file=sys.stderr)
        return EXIT_OUTPUT
    except (StepFailure, MeshTanglingError) as exc:
        print(f"phasefrac: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"phasefrac: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
