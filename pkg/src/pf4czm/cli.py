"""Command line front end.

::

    pf4czm run [CONFIG] [--config PATH | --preset NAME] [--out DIR] [--override k=v ...]
    pf4czm verify
    pf4czm oracle1d [--order fourth] [--chi 2] [--l0 1] [--out DIR]
    pf4czm presets [--emit NAME] [--schema] [--out PATH]

Exit status: 0 success, 1 user error (bad arguments or configuration),
2 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

from .config import ConfigError, RunConfig, apply_overrides, config_schema, parse_config
from .output import CurveWriter, write_vtk
from .presets import PRESETS, get_preset

__all__ = ["main", "EXIT_OK", "EXIT_USAGE", "EXIT_SOLVER"]

EXIT_OK, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2

log = logging.getLogger("pf4czm")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that reports errors through the exit-code convention."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pf4czm", description="Phase-field cohesive fracture on B-spline patches.")
    p.add_argument("-v", "--verbose", action="count", default=0,
                   help="more logging (repeat for debug output)")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    r = sub.add_parser("run", help="run a simulation from a JSON config or a preset")
    r.add_argument("config_path", nargs="?", metavar="CONFIG", help="JSON run configuration")
    r.add_argument("--config", dest="config_flag", metavar="PATH",
                   help="JSON run configuration (same as the positional argument)")
    r.add_argument("--preset", metavar="NAME", help="built-in benchmark (see `presets`)")
    r.add_argument("--out", metavar="DIR", help="output directory (default: output.directory)")
    r.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dot-path override, e.g. schedule.max_steps=20 (repeatable)")

    sub.add_parser("verify", help="run the built-in invariant checks")

    o = sub.add_parser("oracle1d", help="1D optimal crack profile and regularized length")
    o.add_argument("--order", choices=("second", "fourth"), default="fourth")
    o.add_argument("--chi", type=float, default=2.0)
    o.add_argument("--l0", type=float, default=1.0)
    o.add_argument("--elements-per-l0", type=int, default=20,
                   help="fourth order only: cubic elements per l0")
    o.add_argument("--out", metavar="DIR", help="write profile.csv and gamma.csv here "
                   "(default: profile to stdout)")

    s = sub.add_parser("presets", help="list built-in benchmarks")
    s.add_argument("--emit", metavar="NAME", help="print the preset as a JSON config")
    s.add_argument("--schema", action="store_true", help="print the config JSON schema")
    s.add_argument("--out", metavar="PATH", help="write the emitted JSON to a file")
    return p


def _load_config(args) -> RunConfig:
    sources = [x for x in (args.config_path, args.config_flag, args.preset) if x]
    if len(sources) != 1:
        raise ConfigError("give exactly one of CONFIG, --config or --preset")
    if args.preset:
        try:
            cfg = get_preset(args.preset)
        except KeyError as exc:
            raise ConfigError(exc.args[0]) from None
    else:
        path = Path(sources[0])
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
        cfg = parse_config(text)
    if args.override:
        cfg = apply_overrides(cfg, args.override)
    return cfg


def _cmd_run(args) -> int:
    from .solver import NewtonFailure, SingularSystemError, run_simulation

    cfg = _load_config(args)
    problem = cfg.build_problem()
    out = Path(args.out or cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json() + "\n", encoding="utf-8")
    log.info("%s: %d elements, %d dofs -> %s", cfg.name, problem.mesh.n_elements,
             problem.mesh.n_dofs, out)
    samples = cfg.output.vtk_samples

    def snapshot(snap):
        write_vtk(snap, problem.mesh, out / f"snapshot_{snap.step:05d}.vtk", samples)

    def row(r):
        writer.write(r)
        log.info("step %4d  u=%.5e  F=%.5e  cmod=%.4e  it=%d  %s", r.step, r.applied_mm,
                 r.reaction_N, r.cmod_mm, r.iters, r.status)

    t0 = time.perf_counter()
    with CurveWriter(out / "curve.csv") as writer:
        try:
            curve, _ = run_simulation(problem, on_row=row, on_snapshot=snapshot)
        except (NewtonFailure, SingularSystemError) as exc:
            print(f"solver failure: {exc}", file=sys.stderr)
            return EXIT_SOLVER
    failed = any(r.status == "failed" for r in curve.rows)
    print(f"{cfg.name}: {len(curve.rows)} steps in {time.perf_counter() - t0:.1f} s"
          f"{' (stopped on a failed step)' if failed else ''}; results in {out}")
    return EXIT_SOLVER if failed else EXIT_OK


def _cmd_verify(args) -> int:
    from .verification import run_checks

    results = run_checks()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:34s} {r.detail}  ({r.seconds:.2f} s)")
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} checks passed")
    return EXIT_OK if n_fail == 0 else EXIT_SOLVER


def _cmd_oracle1d(args) -> int:
    from .oracle1d import gamma_integral, profile_fourth_order, profile_second_order

    if args.l0 <= 0:
        raise ConfigError("--l0 must be positive")
    if not 0.0 <= args.chi <= 2.0:
        raise ConfigError("--chi must lie in [0, 2]")
    if args.order == "second":
        prof = profile_second_order(args.l0, args.chi)
        gamma = gamma_integral(prof)
    else:
        prof = profile_fourth_order(args.l0, args.chi, elements_per_l0=args.elements_per_l0)
        gamma = prof.gamma

    def dump(fh_profile, fh_gamma):
        w = csv.writer(fh_profile, lineterminator="\n")
        w.writerow(("x_mm", "phi"))
        for x, p in zip(prof.x, prof.phi):
            w.writerow(("%.10e" % x, "%.10e" % p))
        g = csv.writer(fh_gamma, lineterminator="\n")
        g.writerow(("order", "chi", "l0_mm", "gamma"))
        g.writerow((args.order, "%g" % args.chi, "%g" % args.l0, "%.10e" % gamma))

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "profile.csv", "w", newline="") as fp, \
                open(out / "gamma.csv", "w", newline="") as fg:
            dump(fp, fg)
        print(f"gamma = {gamma:.10f}")
    else:
        dump(sys.stdout, sys.stderr)
    return EXIT_OK


def _cmd_presets(args) -> int:
    if args.emit and args.schema:
        raise ConfigError("--emit and --schema are mutually exclusive")
    if args.emit or args.schema:
        if args.schema:
            text = json.dumps(config_schema(), indent=2)
        else:
            try:
                text = get_preset(args.emit).to_json()
            except KeyError as exc:
                raise ConfigError(exc.args[0]) from None
        if args.out:
            Path(args.out).write_text(text + "\n", encoding="utf-8")
        else:
            print(text)
        return EXIT_OK
    for name in PRESETS:
        print(f"{name:32s} {get_preset(name).description}")
    return EXIT_OK


_COMMANDS = {"run": _cmd_run, "verify": _cmd_verify, "oracle1d": _cmd_oracle1d,
             "presets": _cmd_presets}


def main(argv=None) -> int:
    """Entry point; returns the process exit status."""
    try:
        args = _parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
