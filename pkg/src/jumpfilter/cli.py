"""Command line entry point.

Subcommands ``run``, ``validate``, ``list-models`` and ``list-experiments``.
Exit codes: 0 pass, 1 test failure, 2 config error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import sys
import traceback
from pathlib import Path

from .config import EXPERIMENTS, ConfigError, load_config
from .experiments import OUTPUT_ROOT_ENV, run_experiment
from .zoo import list_models

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def _provenance(exc: BaseException) -> str:
    """Innermost package module on the traceback of ``exc``."""
    mod = "jumpfilter"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        name = frame.f_globals.get("__name__", "")
        if name.startswith("jumpfilter"):
            mod = name
    return mod


def _load(path: str):
    try:
        return load_config(path)
    except OSError as exc:
        raise ConfigError([("<file>", f"cannot read {path}: {exc.strerror or exc}")]) from None


def _report_config_error(exc: ConfigError) -> int:
    print("config error:", file=sys.stderr)
    for line in exc.lines():
        print(f"  {line}", file=sys.stderr)
    return EXIT_CONFIG


def cmd_validate(args) -> int:
    try:
        cfg = _load(args.config)
    except ConfigError as exc:
        return _report_config_error(exc)
    sys.stdout.write(cfg.canonical())
    return EXIT_PASS


def cmd_run(args) -> int:
    try:
        cfg = _load(args.config)
    except ConfigError as exc:
        return _report_config_error(exc)
    if not args.quiet:
        sys.stdout.write(cfg.canonical())
    try:
        result = run_experiment(cfg, args.output_root)
    except ConfigError as exc:
        return _report_config_error(exc)
    except Exception as exc:  # noqa: BLE001 - any failure maps to the runtime exit code
        print(f"runtime error in {_provenance(exc)}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for name, ok in sorted(result.pass_flags.items()):
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    print(f"output: {result.output_dir}")
    return result.status


def cmd_list_models(args) -> int:
    for name, summary in list_models():
        print(f"{name:18s} {summary}")
    return EXIT_PASS


def cmd_list_experiments(args) -> int:
    for name, summary in EXPERIMENTS.items():
        print(f"{name:18s} {summary}")
    return EXIT_PASS


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="jumpfilter",
        description="Particle filtering experiments for jump-diffusions with correlated noise.",
        epilog=f"Relative output directories are resolved against ${OUTPUT_ROOT_ENV} when it is set.",
    )
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="validate a config and run its experiment")
    r.add_argument("config", help="YAML experiment config")
    r.add_argument("--output-root", default=None, help=f"root for relative output_dir (overrides ${OUTPUT_ROOT_ENV})")
    r.add_argument("-q", "--quiet", action="store_true", help="do not echo the canonical config")
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("validate", help="validate a config and print its canonical form")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)
    sub.add_parser("list-models", help="list the model zoo").set_defaults(func=cmd_list_models)
    sub.add_parser("list-experiments", help="list experiment types").set_defaults(func=cmd_list_experiments)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
