"""Command-line front end.

Exit codes: 0 success or all Pass, 2 any group Fails, 3 any group is
InsufficientInformation and none Fail, 1 usage, config or I/O errors.
"""

from __future__ import annotations

import argparse
import io
import json
import sys
from pathlib import Path

from . import __version__
from .dataio import load_csv, summarize
from .errors import AuditError, EffectAtThreshold
from .power import PilotSummary, power_at, required_n
from .protocol import exit_code_for, lock_config, render_text, run_audit
from .synthetic import cell_from_dict, coverage_experiment, default_grid, write_experiment_csv

EXIT_OK, EXIT_USAGE, EXIT_FAIL, EXIT_INSUFFICIENT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _overrides(pairs):
    out = {}
    for item in pairs or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value
    return out


def _effective_config(args, criterion=None):
    if not args.config:
        raise UsageError("--config is required")
    cfg = lock_config(Path(args.config).read_bytes())
    over = _overrides(args.set)
    if criterion is not None:
        over["criterion"] = criterion
    if args.seed is not None:
        over["seed"] = args.seed
    return cfg.with_overrides(over) if over else cfg


def _write(dest, text: str):
    if dest in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(dest).write_text(text, encoding="utf-8", newline="\n")


def _cmd_audit(args, criterion=None) -> int:
    cfg = _effective_config(args, criterion)
    if not args.data:
        raise UsageError("--data is required")
    data = load_csv(args.data, cfg)
    report = run_audit(cfg, data)
    if args.out:
        _write(args.out, report.to_json())
    sys.stdout.write(report.to_text())
    return report.exit_code


def _cmd_report(args) -> int:
    if not args.data:
        raise UsageError("report needs --data pointing at a saved JSON report")
    report = json.loads(Path(args.data).read_text(encoding="utf-8"))
    text = render_text(report)
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return exit_code_for(report)


def _cmd_summarize(args) -> int:
    cfg = _effective_config(args)
    if not args.data:
        raise UsageError("--data is required")
    data = load_csv(args.data, cfg)
    cols = list(cfg.summary_columns) or None
    summary = summarize(data, cols)
    if args.out:
        buf = io.StringIO()
        summary.to_csv(buf)
        _write(args.out, buf.getvalue())
    sys.stdout.write(summary.to_text())
    return EXIT_OK


def _cmd_power(args) -> int:
    if args.effect is None and args.delta_star is None:
        raise UsageError("power needs --effect or --delta-star")
    delta_star = args.effect if args.effect is not None else args.delta_star
    d = 0.0 if args.effect is not None else args.d
    pilot = PilotSummary(args.n0, args.sigma2, delta_star, d, args.alpha, args.power)
    try:
        n = required_n(pilot)
    except EffectAtThreshold as exc:
        sys.stderr.write(f"EffectAtThreshold: {exc}\n")
        return EXIT_USAGE
    sys.stdout.write(f"{n}\n")
    if args.out:
        doc = {
            "n0": pilot.n0, "sigma2_delta": pilot.sigma2_delta, "delta_star": pilot.delta_star,
            "d": pilot.d, "alpha": pilot.alpha, "target_power": pilot.target_power,
            "required_n": n, "power_at_required_n": power_at(pilot, n), "tool_version": __version__,
        }
        _write(args.out, json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    if args.config:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        cells = [cell_from_dict(c) for c in doc.get("cells", [])]
    else:
        cells = default_grid()
    from dataclasses import replace

    edits = {}
    if args.seed is not None:
        edits["seed"] = args.seed
    if args.reps is not None:
        edits["reps"] = args.reps
    if args.n is not None:
        edits["n"] = args.n
    cells = [replace(c, **edits) for c in cells]
    rows = coverage_experiment(cells)
    buf = io.StringIO()
    write_experiment_csv(rows, buf)
    _write(args.out, buf.getvalue())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fairaudit", description="Regression fairness audits of deterministic pricing.")
    p.add_argument("--version", action="version", version=f"fairaudit {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, data_help="input CSV"):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--data", help=data_help)
        sp.add_argument("--out", help="output path")
        sp.add_argument("--seed", type=int, help="seed override")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")
        return sp

    common(sub.add_parser("audit", help="run the configured criterion per group"))
    common(sub.add_parser("pd-test", help="proxy-discrimination audit (criterion PD)"))
    common(sub.add_parser("cdp-test", help="conditional demographic parity audit (criterion CDP)"))
    common(sub.add_parser("summarize", help="summary statistics by protected status"))
    common(sub.add_parser("report", help="render a saved JSON report as text"), "saved JSON report")

    sim = common(sub.add_parser("simulate", help="Monte Carlo coverage experiment"), "unused")
    sim.add_argument("--reps", type=int, help="replicates per cell")
    sim.add_argument("--n", type=int, help="subsample size per cell")

    pw = sub.add_parser("power", help="required sample size from a pilot")
    pw.add_argument("--n0", type=int, required=True, help="pilot sample size")
    pw.add_argument("--sigma2", type=float, required=True, help="pilot variance of the estimator")
    pw.add_argument("--alpha", type=float, default=0.05)
    pw.add_argument("--power", type=float, default=0.80, help="target power")
    pw.add_argument("--effect", type=float, help="|true effect - threshold|")
    pw.add_argument("--delta-star", type=float, help="true effect (with --d)")
    pw.add_argument("--d", type=float, default=0.0, help="threshold")
    pw.add_argument("--out", help="optional JSON output")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        if not argv:
            raise UsageError("a subcommand is required")
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        handlers = {
            "audit": lambda a: _cmd_audit(a),
            "pd-test": lambda a: _cmd_audit(a, "PD"),
            "cdp-test": lambda a: _cmd_audit(a, "CDP"),
            "summarize": _cmd_summarize,
            "report": _cmd_report,
            "power": _cmd_power,
            "simulate": _cmd_simulate,
        }
        return handlers[args.command](args)
    except UsageError as exc:
        parser.print_help(sys.stderr)
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except (AuditError, OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        sys.stderr.write(f"{type(exc).__name__}: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
