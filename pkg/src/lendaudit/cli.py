"""Command-line entry point.

Subcommands:
  audit          run the full pipeline and write report + tables + figures
  simulate       generate a synthetic market as the standard CSV inputs
  calibrate      fit blind/aware risk models, write scores + calibration tables
  counterfactual run the counterfactual regressions from a calibrate artifact
  diff           compare two report.json files cell by cell

Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import yaml

from . import __version__
from .data import write_applications, write_demographics, write_loans
from .errors import NumericalError, ValidationError
from .groups import AXES, categories, parse_scheme
from .counterfactuals import (
    counterfactual_approval_delta,
    counterfactual_apr_delta,
    counterfactual_noshop_irr,
    fit_approval_model,
    fit_apr_model,
    fit_noshop_irr_model,
)
from .report import (
    AuditReport,
    diff_reports,
    load_dataset,
    load_run_config,
    fit_both_risk_models,
    run_audit,
    write_report,
    _atomic_write,
    _csv_cell,
    _metric_rows,
    _subseed,
)
from .riskmodels import calibration_curve, calibration_gap
from .synthgen import MarketConfig, generate_market


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lendaudit", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"lendaudit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="YAML run configuration")
        sp.add_argument("--group-scheme", choices=["weighted", "argmax"], dest="group_scheme")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")

    a = sub.add_parser("audit", help="run the full audit pipeline")
    common(a)
    a.add_argument("--no-figures", action="store_true", help="skip figure rendering")

    s = sub.add_parser("simulate", help="generate a synthetic lending market")
    s.add_argument("--config", required=True, help="YAML file with a 'simulate' section")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="directory for the generated CSV files")

    c = sub.add_parser("calibrate", help="fit risk models and write scores + calibration")
    common(c)

    cf = sub.add_parser("counterfactual", help="counterfactual regressions from a calibrate artifact")
    common(cf)
    cf.add_argument("--scores", required=True, help="scores.csv written by calibrate")

    d = sub.add_parser("diff", help="compare two reports")
    d.add_argument("report_a")
    d.add_argument("report_b")
    d.add_argument("--tolerance", type=float, default=0.0)
    return p


def _market_config_from_yaml(path, seed_override=None) -> MarketConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    section = dict(raw.get("simulate", {}))
    if "seed" not in section and "seed" in raw:
        section["seed"] = raw["seed"]
    if seed_override is not None:
        section["seed"] = seed_override
    if "seed" not in section:
        raise ValidationError("config field 'seed' is mandatory for simulate")

    def tupled(v):
        if isinstance(v, list):
            return tuple(tupled(x) for x in v)
        return v

    section = {k: tupled(v) for k, v in section.items()}
    try:
        return MarketConfig(**section).validate()
    except TypeError as exc:
        raise ValidationError(f"bad simulate config: {exc}") from None


def _cmd_simulate(args) -> int:
    config = _market_config_from_yaml(args.config, args.seed)
    ds = generate_market(config)
    os.makedirs(args.out, exist_ok=True)
    write_loans(ds.loans, os.path.join(args.out, "loans.csv"), os.path.join(args.out, "cashflows.csv"))
    write_demographics(ds.demographics, os.path.join(args.out, "demographics.csv"))
    write_applications(ds.applications, os.path.join(args.out, "applications.csv"))
    print(f"wrote {len(ds.loans)} loans, {len(ds.applications)} applications to {args.out}")
    return 0


def _overrides(args) -> dict:
    return {
        "seed": getattr(args, "seed", None),
        "group_scheme": getattr(args, "group_scheme", None),
        "out": getattr(args, "out", None),
    }


def _cmd_audit(args) -> int:
    config = load_run_config(args.config, _overrides(args))
    if args.no_figures:
        config.figures = False
    report = run_audit(config)
    write_report(report, config.out_dir, render_figures=config.figures)
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"report written to {os.path.join(config.out_dir, 'report.json')}")
    return 0


def _write_table_csv(rows, path):
    if rows:
        cols = list(rows[0].keys())
        text = ",".join(cols) + "\n" + "\n".join(
            ",".join(_csv_cell(r.get(c)) for c in cols) for r in rows
        ) + "\n"
    else:
        text = ""
    _atomic_write(path, text)


def _cmd_calibrate(args) -> int:
    config = load_run_config(args.config, _overrides(args))
    ds, _ = load_dataset(config)
    scheme = parse_scheme(config.group_scheme)
    blind, aware = fit_both_risk_models(ds, config)
    os.makedirs(config.out_dir, exist_ok=True)
    ids = sorted(blind.probs)
    lines = ["id,blind_score,aware_score,blind_fold,aware_fold"]
    for i in ids:
        bf = blind.fold_of.get(i, "")
        af = aware.fold_of.get(i, "")
        lines.append(f"{i},{blind.probs[i]!r},{aware.probs[i]!r},{bf},{af}")
    _atomic_write(os.path.join(config.out_dir, "scores.csv"), "\n".join(lines) + "\n")
    for key, rs in (("f4_calibration_blind", blind), ("f6_calibration_aware", aware)):
        rows, gaps = [], []
        for axis in AXES:
            for group in categories(axis):
                try:
                    curve = calibration_curve(rs, ds.loans, ds.demographics, scheme, axis,
                                              group, n_bins=config.calibration_bins)
                except ValidationError as exc:
                    print(f"warning: {key}: {exc}", file=sys.stderr)
                    continue
                rows.extend({"axis": axis, "group": group, **p} for p in curve.points)
                gap, se = calibration_gap(rs, ds.loans, ds.demographics, scheme, axis, group)
                gaps.append({"axis": axis, "group": group, "gap": gap, "se": se})
        _write_table_csv(rows, os.path.join(config.out_dir, f"{key}.csv"))
        _write_table_csv(gaps, os.path.join(config.out_dir, f"{key}_gap.csv"))
    print(f"scores and calibration tables written to {config.out_dir}")
    return 0


def _read_scores(path):
    import csv

    blind, aware = {}, {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            blind[row["id"]] = float(row["blind_score"])
            aware[row["id"]] = float(row["aware_score"])
    return blind, aware


def _cmd_counterfactual(args) -> int:
    config = load_run_config(args.config, _overrides(args))
    ds, _ = load_dataset(config)
    if not ds.applications:
        raise ValidationError("counterfactual requires an applications file")
    blind, aware = _read_scores(args.scores)
    scheme = parse_scheme(config.group_scheme)
    os.makedirs(config.out_dir, exist_ok=True)
    fit_app = fit_approval_model(ds.applications, blind)
    fit_apr = fit_apr_model(ds.applications, blind)
    fits = {}
    rows_app, rows_apr, rows_irr = [], [], []
    for axis in AXES:
        rows_app.extend(_metric_rows(counterfactual_approval_delta(
            fit_app, ds.applications, blind, aware, ds.demographics, scheme, axis,
            n_boot=config.n_boot, seed=_subseed(config.seed, "approval_delta"))))
        rows_apr.extend(_metric_rows(counterfactual_apr_delta(
            fit_apr, ds.applications, blind, aware, ds.demographics, scheme, axis,
            n_boot=config.n_boot, seed=_subseed(config.seed, "apr_delta"))))
    fit_irr = fit_noshop_irr_model(ds.loans, ds.applications, aware,
                                   intercept=config.noshop_intercept)
    for axis in AXES:
        rows_irr.extend(_metric_rows(counterfactual_noshop_irr(
            fit_irr, ds.applications, aware, ds.demographics, scheme, axis,
            n_boot=config.n_boot, seed=_subseed(config.seed, "noshop"))))
    for f in (fit_app, fit_apr, fit_irr):
        fits[f.spec_id.value] = {
            "coefficients": f.coefficients, "standard_errors": f.standard_errors, "n": f.n,
        }
    _write_table_csv(rows_app, os.path.join(config.out_dir, "f7_approval_delta.csv"))
    _write_table_csv(rows_apr, os.path.join(config.out_dir, "f7_apr_delta.csv"))
    _write_table_csv(rows_irr, os.path.join(config.out_dir, "f8_counterfactual_irr.csv"))
    _atomic_write(os.path.join(config.out_dir, "fits.json"),
                  json.dumps(fits, sort_keys=True, indent=1) + "\n")
    print(f"counterfactual tables written to {config.out_dir}")
    return 0


def _cmd_diff(args) -> int:
    with open(args.report_a, encoding="utf-8") as fh:
        a = AuditReport.from_json(fh.read())
    with open(args.report_b, encoding="utf-8") as fh:
        b = AuditReport.from_json(fh.read())
    diff = diff_reports(a, b, tolerance=args.tolerance)
    print(json.dumps(diff, sort_keys=True, indent=1, default=float))
    return 0 if not diff else 1


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "audit": _cmd_audit,
        "simulate": _cmd_simulate,
        "calibrate": _cmd_calibrate,
        "counterfactual": _cmd_counterfactual,
        "diff": _cmd_diff,
    }
    try:
        return handlers[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
