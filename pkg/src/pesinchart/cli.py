"""Command line entry point."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import load_config
from .errors import ConfigError, NumericFailure, PesinError
from .pipeline import COMMANDS, SUITES, run_command

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pesinchart", description="Lyapunov charts, chains and Markov covers on tori")
    p.add_argument("command", choices=sorted(COMMANDS) + ["check"])
    p.add_argument("suite", nargs="?", default="all", choices=list(SUITES) + ["all"],
                   help="check suite (only for the check command)")
    p.add_argument("--config", type=Path, default=None, help="sectioned key-value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mode", choices=["literal", "practical"], default=None)
    p.add_argument("--out", type=Path, default=None, help="output directory")
    return p


def _table(run) -> str:
    w = max([len(c.name) for c in run.checks] + [9])
    lines = [f"{'invariant':<{w}}  {'measured':>12}  {'bound':>12}  result"]
    for c in run.checks:
        lines.append(f"{c.name:<{w}}  {c.measured:>12.4e}  {c.bound:>12.4e}  {'pass' if c.ok else 'FAIL'}")
    return "\n".join(lines)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = cfg.with_overrides(seed=args.seed, mode=args.mode,
                                 output_dir=str(args.out) if args.out is not None else None)
        run = run_command(cfg, args.command, Path(cfg.output_dir), args.suite)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailure as exc:
        stage = getattr(exc, "stage", None)
        where = f" in stage {stage}" if stage else ""
        print(f"numeric failure{where}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PesinError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(_table(run))
    verdict = "PASS" if run.passed else "FAIL"
    print(f"{args.command}: {verdict} ({sum(c.ok for c in run.checks)}/{len(run.checks)} checks)")
    return EXIT_OK if run.passed else EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
