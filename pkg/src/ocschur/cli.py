"""Command-line entry point: ``ocschur <experiment> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from ocschur.errors import ContractError, OcschurError

SUBCOMMANDS = {"phi-sweep": "phi_sweep", "scalability": "scalability",
               "precond-compare": "precond_compare", "accuracy-cliff": "accuracy_cliff"}
THREADS_ENV = "OCSCHUR_THREADS"

log = logging.getLogger("ocschur")


def build_parser():
    parser = argparse.ArgumentParser(prog="ocschur", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", type=Path, help="JSON experiment config")
        p.add_argument("--out", type=Path, help="output file (default: stdout)")
        p.add_argument("--format", choices=("csv", "json"), help="output format")
        p.add_argument("--deterministic", action="store_true", default=None,
                       help="reproducible rows (wall-time columns excepted)")
        p.add_argument("--threads", type=int, help=f"worker threads (env {THREADS_ENV})")
        p.add_argument("--no-resume", action="store_true",
                       help="recompute rows already present in --out")
        p.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("verify", help="run the quick oracle checks")
    return parser


def resolve_threads(flag, env=None):
    env = os.environ if env is None else env
    if flag is not None:
        return flag
    raw = env.get(THREADS_ENV)
    if raw in (None, ""):
        return None
    try:
        return int(raw)
    except ValueError:
        raise ContractError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


def load_config(args, kind):
    from ocschur.expcli.io import ExperimentConfig

    data = {}
    if args.config is not None:
        try:
            data = json.loads(args.config.read_text())
        except OSError as exc:
            raise ContractError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ContractError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ContractError("config must be a JSON object")
        if data.setdefault("kind", kind) != kind:
            raise ContractError(f"config kind {data['kind']!r} does not match command {kind!r}")
    data["kind"] = kind
    return ExperimentConfig.from_dict(
        data, format=args.format, deterministic=args.deterministic,
        threads=resolve_threads(args.threads),
        output=str(args.out) if args.out else None)


def _verify():
    from ocschur.expcli.verify import run_checks

    checks = run_checks()
    for c in checks:
        print(c.line())
    return 0 if all(c.passed for c in checks) else 1


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "verify":
        return _verify()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    from ocschur.expcli.experiments import run_and_emit

    try:
        config = load_config(args, SUBCOMMANDS[args.command])
        rows, text = run_and_emit(config, out=config.output or None,
                                  resume=not args.no_resume)
    except (OcschurError, OSError) as exc:
        print(f"ocschur: error: {exc}", file=sys.stderr)
        return 2
    failed = [r for r in rows if r.get("error")]
    for r in failed:
        log.warning("row %s failed: %s", r["key"], r["error"])
    if not config.output:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
