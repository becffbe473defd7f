"""Command-line interface.

Subcommands: ``simulate``, ``estimate-irf``, ``counterfactual``,
``scenario``, ``intervene``.  Each takes ``--config FILE`` plus overrides
``--seed``, ``--horizon``, ``--level``, ``--out-dir``.  Exit codes: 0 on
success, 1 on input errors, 2 on numerical failures.
"""

from __future__ import annotations

import argparse
import sys

from macrocf.errors import InputError, NumericalError
from macrocf.io import SchemaError, emit_report, load_config, parse_config_file
from macrocf.pipelines import run_scenario, run_simulate

_SUBCOMMAND_TASKS = {
    "estimate-irf": ("estimate_irf",),
    "counterfactual": ("estimate_counterfactual",),
    "scenario": ("historical", "future"),
    "intervene": ("intervention",),
}


def _add_common(parser):
    parser.add_argument("--config", required=True, help="flat key=value config file")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--horizon", type=int, default=None, help="override config horizon")
    parser.add_argument("--level", type=float, default=None, help="override confidence level")
    parser.add_argument("--out-dir", default=".", help="directory for report CSVs")
    parser.add_argument("--format", choices=["csv", "human"], default="csv",
                        help="write CSV files (default) or print an aligned table")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="macrocf",
        description="Counterfactual policy-path analysis for multivariate time series.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("simulate", "simulate a synthetic panel from a model file"),
        ("estimate-irf", "estimate instrument-identified impulse responses"),
        ("counterfactual", "estimate counterfactual parameters by horizon"),
        ("scenario", "historical or future policy-path scenario analysis"),
        ("intervene", "zeroing-out policy intervention effects"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
    return parser


def _run(args) -> int:
    overrides = {"seed": args.seed, "horizon": args.horizon, "level": args.level}
    if args.command == "simulate":
        raw = parse_config_file(args.config)
        sim_overrides = {"seed": args.seed} if args.seed is not None else {}
        bundle = run_simulate(raw, sim_overrides)
    else:
        cfg = load_config(args.config, overrides)
        allowed = _SUBCOMMAND_TASKS[args.command]
        if cfg.task not in allowed:
            raise SchemaError(
                f"subcommand {args.command!r} expects task in {allowed}, "
                f"config says {cfg.task!r}"
            )
        bundle = run_scenario(cfg)
    if args.format == "human":
        sys.stdout.write(emit_report(bundle, fmt="human_table"))
    else:
        files = emit_report(bundle, out_dir=args.out_dir, fmt="csv")
        for name in files:
            print(f"wrote {args.out_dir}/{name}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except InputError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
