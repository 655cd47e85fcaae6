"""Command-line interface: validate, simulate, backtest, report."""

import argparse
import sys

from countsynth.cli_io import (
    ConfigError,
    ImbalanceError,
    PanelFormatError,
    audit_manifest,
    emit_reports,
    load_config,
    load_panel,
    run_backtest,
    save_panel,
    simulate_panel,
)
from countsynth.domain import validate_panel

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_VALIDATION = 2
EXIT_CONFIG = 3
EXIT_DATA = 4


def _cmd_validate(args):
    panel = load_panel(args.panel)
    violations = validate_panel(panel)
    if violations:
        for v in violations:
            print(v)
        print(f"{len(violations)} violation(s)")
        return EXIT_VALIDATION
    print(f"ok: {panel.n} series x {panel.T_total} times ({panel.frequency.value})")
    return EXIT_OK


def _cmd_simulate(args):
    panel = simulate_panel(
        seed=args.seed, n=args.n, T_total=args.T, n_clusters=args.clusters
    )
    save_panel(panel, args.out)
    print(f"wrote {args.out}: {panel.n} series x {panel.T_total} times")
    return EXIT_OK


def _cmd_backtest(args):
    panel = load_panel(args.panel)
    violations = validate_panel(panel)
    if violations:
        for v in violations:
            print(v, file=sys.stderr)
        return EXIT_VALIDATION
    syn_config, plan, settings = load_config(args.config)
    run_dir = run_backtest(panel, plan, syn_config, settings, args.out)
    leaks = audit_manifest(run_dir)
    if leaks:
        for cell in leaks:
            print(f"leakage: {cell}", file=sys.stderr)
        return EXIT_INTERNAL
    print(f"run complete: {run_dir}")
    return EXIT_OK


def _cmd_report(args):
    written = emit_reports(args.run)
    for path in written:
        print(path)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="countsynth",
        description="Mixture Bayesian predictive synthesis for count panels",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a panel file")
    p.add_argument("panel")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("simulate", help="generate a synthetic panel")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--T", type=int, default=120)
    p.add_argument("--clusters", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("backtest", help="run the expanding-window protocol")
    p.add_argument("--panel", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_backtest)

    p = sub.add_parser("report", help="emit metric files from a run directory")
    p.add_argument("--run", required=True)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (PanelFormatError, ImbalanceError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:   # noqa: BLE001 - CLI boundary
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
