"""
Command-line entry point.

    adcs simulate <scenario.yaml> [--seed N] [--out-dir DIR] [--sweep key=range]
    adcs estimate-replay <scenario.yaml> ...
    adcs closed-loop <scenario.yaml> ...
    adcs validate <scenario.yaml>

Exit codes: 0 success, 1 validation failure, 2 runtime error.

``--sweep`` takes ``dotted.key=start:stop:count`` (inclusive linspace) or
``dotted.key=a,b,c`` and runs one scenario per value in a process pool,
each writing to its own sub-directory of the output directory.
"""

import argparse
import copy
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import AdcsError, StepError
from . import runner
from .scenario import MODES, ScenarioError, build, load, set_path, validate

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def parse_sweep(arg: str):
    """``key=start:stop:count`` or ``key=a,b,c`` to ``(key, [values])``."""
    if "=" not in arg:
        raise ValueError(f"sweep {arg!r} must look like key=start:stop:count or key=a,b,c")
    key, rng = arg.split("=", 1)
    key = key.strip()
    if not key:
        raise ValueError("sweep key is empty")
    if ":" in rng:
        parts = rng.split(":")
        if len(parts) != 3:
            raise ValueError(f"sweep range {rng!r} must be start:stop:count")
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        if count < 1:
            raise ValueError("sweep count must be at least 1")
        return key, [float(x) for x in np.linspace(start, stop, count)]
    values = [yaml.safe_load(v) for v in rng.split(",") if v.strip()]
    if not values:
        raise ValueError(f"sweep {arg!r} has no values")
    return key, values


def _run_one(mode, doc, base_dir, out_dir, seed):
    """Validate, build and run one scenario; returns ``(exit code, message)``."""
    findings = validate(doc, base_dir, mode)
    if findings:
        return EXIT_INVALID, "\n".join(str(f) for f in findings)
    try:
        sc = build(doc, base_dir, mode, seed)
        out = Path(out_dir) if out_dir else (sc.output_dir or Path("adcs_out"))
        runner.run(sc, out)
    except ScenarioError as exc:
        return EXIT_INVALID, str(exc)
    except StepError as exc:
        return EXIT_RUNTIME, f"runtime error: {exc}"
    except (AdcsError, ArithmeticError, ValueError, OSError) as exc:
        return EXIT_RUNTIME, f"runtime error: {type(exc).__name__}: {exc}"
    return EXIT_OK, f"wrote {out}"


def _sweep_label(key, value):
    return f"{key}={value}".replace("/", "_")


def _cmd_validate(args):
    findings = validate(args.scenario)
    for f in findings:
        print(f)
    if not findings:
        print("ok")
    return EXIT_INVALID if findings else EXIT_OK


def _cmd_run(args):
    path = Path(args.scenario)
    try:
        doc = load(path)
    except (OSError, yaml.YAMLError) as exc:
        print(f"<file>: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if not isinstance(doc, dict):
        print("<root>: expected a mapping", file=sys.stderr)
        return EXIT_INVALID
    base = path.parent
    if not args.sweep:
        code, msg = _run_one(args.command, doc, base, args.out_dir, args.seed)
        print(msg, file=sys.stderr if code else sys.stdout)
        return code
    try:
        key, values = parse_sweep(args.sweep)
    except ValueError as exc:
        print(f"--sweep: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out_root = Path(args.out_dir) if args.out_dir else Path(doc.get("output_dir") or "adcs_out")
    jobs = []
    for v in values:
        d = copy.deepcopy(doc)
        try:
            set_path(d, key, v)
        except (KeyError, IndexError, ValueError, TypeError, AttributeError) as exc:
            print(f"--sweep: cannot set {key}: {exc}", file=sys.stderr)
            return EXIT_INVALID
        jobs.append((args.command, d, base, out_root / _sweep_label(key, v), args.seed))
    with ProcessPoolExecutor(max_workers=args.workers) as pool:
        results = list(pool.map(_run_one, *zip(*jobs)))
    worst = EXIT_OK
    for (_, _, _, out, _), (code, msg) in zip(jobs, results):
        print(f"[{out.name}] {msg}", file=sys.stderr if code else sys.stdout)
        worst = max(worst, code)
    return worst


class _Parser(argparse.ArgumentParser):
    # bad command lines are configuration errors, not runtime errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="adcs", description="Spacecraft attitude estimation and VSCMG simulation.")
    p.add_argument("--version", action="version", version=f"adcs {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for mode in MODES:
        s = sub.add_parser(mode, help=f"run a scenario in {mode} mode")
        s.add_argument("scenario", help="scenario YAML file")
        s.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        s.add_argument("--out-dir", default=None, help="output directory (overrides output_dir)")
        s.add_argument("--sweep", default=None, metavar="KEY=RANGE", help="key=start:stop:count or key=a,b,c")
        s.add_argument("--workers", type=int, default=None, help="process pool size for --sweep")
        s.set_defaults(func=_cmd_run)
    v = sub.add_parser("validate", help="report every problem in a scenario without running it")
    v.add_argument("scenario")
    v.set_defaults(func=_cmd_validate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
