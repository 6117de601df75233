"""Pipeline orchestration: run the full audit from a run configuration and
emit a JSON report, one CSV per table, optional rendered figures, and a
manifest tying them together.

Table keys map to the figure-analog outputs:
f1 group portfolio IRR; f2 target-return-vs-loss curve echo; f3 target
return and principal lost by group; f4/f6 blind/aware calibration;
f5 default by APR; f7 counterfactual approval/APR deltas; f8 realized vs
no-shopping counterfactual IRR; a5 default rates; a6 target-return/default
deciles; a7 IRR volatility.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import zlib
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np
import yaml

from . import __version__
from .counterfactuals import (
    counterfactual_approval_delta,
    counterfactual_apr_delta,
    counterfactual_noshop_irr,
    fit_approval_model,
    fit_apr_model,
    fit_noshop_irr_model,
)
from .data import Dataset, ingest_applications, ingest_demographics, ingest_loans
from .errors import DegenerateInputError, ValidationError
from .groups import AXES, GroupScheme, categories, parse_scheme, weight_matrix
from .metrics import (
    default_rate_by_group,
    irr_volatility_by_group,
    loan_loss_fractions,
    mean_individual_irr_by_group,
    portfolio_irr_by_group,
    principal_lost_by_group,
    target_return_by_group,
    target_return_default_curve,
)
from .riskmodels import (
    Awareness,
    Learner,
    RiskModelSpec,
    calibration_curve,
    calibration_gap,
    default_by_apr_curve,
    demographic_features,
    fit_risk_model,
)
from .stats import weighted_quantile

ALL_METRICS = (
    "portfolio_irr",
    "mean_individual_irr",
    "target_return",
    "principal_lost",
    "default_rate",
    "irr_volatility",
    "target_return_curve",
    "calibration",
    "default_by_apr",
    "counterfactuals",
    "noshop",
)


@dataclass
class RunConfig:
    seed: int
    loans_path: str
    cashflows_path: str
    demographics_path: str
    applications_path: str | None = None
    out_dir: str = "audit-out"
    group_scheme: str = "weighted"
    n_boot: int = 1000
    metrics: dict = field(default_factory=dict)  # metric name -> bool
    learner: str = "gbt"
    n_folds: int = 5
    model_seed: int = 0  # separate from the run seed so points are bootstrap-seed-free
    hyperparameters: dict = field(default_factory=dict)
    calibration_bins: int = 10
    noshop_intercept: bool = False
    figures: bool = True
    config_bytes: bytes | None = field(default=None, repr=False)

    def enabled(self, name: str) -> bool:
        return bool(self.metrics.get(name, True))

    def config_hash(self) -> str:
        payload = self.config_bytes
        if payload is None:
            snap = {k: v for k, v in self.__dict__.items() if k != "config_bytes"}
            payload = json.dumps(snap, sort_keys=True, default=str).encode()
        return hashlib.sha256(payload).hexdigest()


def load_run_config(path, overrides: dict | None = None) -> RunConfig:
    """Read the YAML run configuration; CLI flag overrides win."""
    with open(path, "rb") as fh:
        raw_bytes = fh.read()
    raw = yaml.safe_load(raw_bytes) or {}
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    inputs = raw.get("inputs", {})

    def pick(key, default=None):
        return overrides.get(key, raw.get(key, default))

    if pick("seed") is None:
        raise ValidationError("config field 'seed' is mandatory (no wall-clock seeding)")
    for key in ("loans", "cashflows", "demographics"):
        if key not in inputs:
            raise ValidationError(f"config field 'inputs.{key}' is missing")
    cfg = RunConfig(
        seed=int(pick("seed")),
        loans_path=inputs["loans"],
        cashflows_path=inputs["cashflows"],
        demographics_path=inputs["demographics"],
        applications_path=inputs.get("applications"),
        out_dir=str(pick("out", raw.get("output", {}).get("dir", "audit-out"))),
        group_scheme=str(pick("group_scheme", "weighted")),
        n_boot=int(raw.get("bootstrap", {}).get("n_boot", 1000)),
        metrics=dict(raw.get("metrics", {})),
        learner=str(raw.get("risk_model", {}).get("learner", "gbt")),
        n_folds=int(raw.get("risk_model", {}).get("n_folds", 5)),
        model_seed=int(raw.get("risk_model", {}).get("seed", 0)),
        hyperparameters=dict(raw.get("risk_model", {}).get("hyperparameters", {})),
        calibration_bins=int(raw.get("calibration", {}).get("n_bins", 10)),
        noshop_intercept=bool(raw.get("noshop_intercept", False)),
        figures=bool(pick("figures", raw.get("output", {}).get("figures", True))),
        config_bytes=raw_bytes,
    )
    for path_name in ("loans_path", "cashflows_path", "demographics_path"):
        p = getattr(cfg, path_name)
        if not os.path.exists(p):
            raise ValidationError(f"input file does not exist: {p}")
    if cfg.applications_path and not os.path.exists(cfg.applications_path):
        raise ValidationError(f"input file does not exist: {cfg.applications_path}")
    return cfg


@dataclass
class AuditReport:
    metadata: dict
    tables: dict[str, list[dict]]
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {"metadata": self.metadata, "tables": self.tables, "warnings": self.warnings},
            sort_keys=True,
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "AuditReport":
        obj = json.loads(text)
        return cls(metadata=obj["metadata"], tables=obj["tables"], warnings=obj.get("warnings", []))


def _subseed(master: int, name: str) -> int:
    return int(np.random.SeedSequence(entropy=master, spawn_key=(zlib.crc32(name.encode()),)).generate_state(1)[0])


def _metric_rows(metrics_list) -> list[dict]:
    return [m.as_row() for m in metrics_list]


def load_dataset(config: RunConfig):
    ingest = ingest_loans(config.loans_path, config.cashflows_path)
    demographics = ingest_demographics(config.demographics_path)
    applications = (
        ingest_applications(config.applications_path) if config.applications_path else []
    )
    ds = Dataset(loans=ingest.loans, applications=applications, demographics=demographics)
    ds.validate()
    return ds, ingest.n_shifted


def fit_both_risk_models(ds: Dataset, config: RunConfig):
    """Blind and aware cross-fitted scores for loans, extended to any
    application-only ids by fold-averaged prediction."""
    learner = Learner.GRADIENT_BOOSTED_TREES if config.learner == "gbt" else Learner.LOGISTIC_REGRESSION
    hp = tuple(sorted(config.hyperparameters.items()))
    scores = {}
    for aw in (Awareness.BLIND, Awareness.AWARE):
        spec = RiskModelSpec(awareness=aw, learner=learner, n_folds=config.n_folds,
                             seed=config.model_seed, hyperparameters=hp)
        rs = fit_risk_model(ds.loans, ds.demographics, spec)
        known = set(rs.probs)
        extra = [a for a in ds.applications if a.application_id not in known]
        if extra:
            feats = np.array([a.features for a in extra])
            demo_rows = np.array(
                [demographic_features(ds.demographics[a.application_id]) for a in extra]
            )
            preds = rs.predict_new(feats, demo_rows if aw is Awareness.AWARE else None)
            for a, p in zip(extra, preds):
                rs.probs[a.application_id] = float(p)
        scores[aw] = rs
    return scores[Awareness.BLIND], scores[Awareness.AWARE]


def _target_return_curve_table(loans, demographics, scheme) -> list[dict]:
    """Empirical echo of the pricing curve: deciles of target return with
    the realized principal-lost rate in each decile."""
    have = [l for l in loans if l.target_return is not None]
    if len(have) < 10:
        raise DegenerateInputError("too few loans with target_return for the curve echo")
    tr = np.array([l.target_return for l in have])
    frac = loan_loss_fractions(have)
    p0 = np.array([l.principal for l in have])
    qs = np.linspace(0, 1, 11)[1:-1]
    edges = np.unique(weighted_quantile(tr, np.ones_like(tr), qs))
    bins = np.searchsorted(edges, tr, side="right")
    rows = []
    for b in range(len(edges) + 1):
        mask = bins == b
        if not mask.any():
            continue
        rows.append(
            {
                "bin": int(b),
                "target_return": float(tr[mask].mean()),
                "principal_lost": float((frac[mask] * p0[mask]).sum() / p0[mask].sum()),
                "n": int(mask.sum()),
            }
        )
    return rows


def run_audit(config: RunConfig) -> AuditReport:
    """Execute the full pipeline per the config toggles and write outputs."""
    scheme = parse_scheme(config.group_scheme)
    ds, n_shifted = load_dataset(config)
    tables: dict[str, list[dict]] = {}
    warnings: list[str] = []
    seed = config.seed
    nb = config.n_boot
    have_target = all(l.target_return is not None for l in ds.loans)

    def both_axes(fn, key, **kw):
        rows = []
        for axis in AXES:
            rows.extend(_metric_rows(fn(ds.loans, ds.demographics, scheme, axis, **kw)))
        tables[key] = rows

    if config.enabled("portfolio_irr"):
        both_axes(portfolio_irr_by_group, "f1_portfolio_irr",
                  n_boot=nb, seed=_subseed(seed, "portfolio_irr"))
    if config.enabled("mean_individual_irr"):
        both_axes(mean_individual_irr_by_group, "f8_realized_irr",
                  n_boot=nb, seed=_subseed(seed, "mean_individual_irr"))
    if config.enabled("target_return"):
        if have_target:
            both_axes(target_return_by_group, "f3_target_return",
                      n_boot=nb, seed=_subseed(seed, "target_return"))
        else:
            warnings.append("target_return missing; f3_target_return skipped")
    if config.enabled("principal_lost"):
        both_axes(principal_lost_by_group, "f3_principal_lost",
                  n_boot=nb, seed=_subseed(seed, "principal_lost"))
    if config.enabled("default_rate"):
        both_axes(default_rate_by_group, "a5_default_rate",
                  n_boot=nb, seed=_subseed(seed, "default_rate"))
    if config.enabled("irr_volatility"):
        both_axes(irr_volatility_by_group, "a7_irr_volatility",
                  n_boot=nb, seed=_subseed(seed, "irr_volatility"))
    if config.enabled("target_return_curve"):
        if have_target:
            tables["f2_target_return_curve"] = _target_return_curve_table(
                ds.loans, ds.demographics, scheme
            )
            rows = []
            for axis in AXES:
                for group in categories(axis):
                    try:
                        points, corr = target_return_default_curve(
                            ds.loans, ds.demographics, scheme, axis, group
                        )
                    except DegenerateInputError as exc:
                        warnings.append(str(exc))
                        continue
                    for p in points:
                        rows.append({"axis": axis, "group": group, **p,
                                     "correlation": corr if np.isfinite(corr) else None})
            tables["a6_target_default_curve"] = rows
        else:
            warnings.append("target_return missing; curve tables skipped")

    need_models = config.enabled("calibration") or config.enabled("counterfactuals") or config.enabled("noshop")
    blind = aware = None
    if need_models:
        blind, aware = fit_both_risk_models(ds, config)

    if config.enabled("calibration"):
        for key, rs in (("f4_calibration_blind", blind), ("f6_calibration_aware", aware)):
            rows, smooth_rows, gap_rows = [], [], []
            for axis in AXES:
                for group in categories(axis):
                    try:
                        curve = calibration_curve(
                            rs, ds.loans, ds.demographics, scheme, axis, group,
                            n_bins=config.calibration_bins,
                        )
                    except DegenerateInputError as exc:
                        warnings.append(f"{key}: {exc}")
                        continue
                    for p in curve.points:
                        rows.append({"axis": axis, "group": group, **p})
                    for x, y in zip(curve.smoothed_grid, curve.smoothed_rate):
                        smooth_rows.append(
                            {"axis": axis, "group": group, "pred": float(x), "rate": float(y)}
                        )
                    gap, se = calibration_gap(rs, ds.loans, ds.demographics, scheme, axis, group)
                    gap_rows.append({"axis": axis, "group": group, "gap": gap, "se": se})
            tables[key] = rows
            tables[key + "_smooth"] = smooth_rows
            tables[key + "_gap"] = gap_rows

    if config.enabled("default_by_apr"):
        rows = []
        for axis in AXES:
            for group in categories(axis):
                try:
                    curve = default_by_apr_curve(
                        ds.loans, ds.demographics, scheme, axis, group,
                        seed=_subseed(seed, f"apr_curve_{axis}_{group}"),
                    )
                except DegenerateInputError as exc:
                    warnings.append(f"f5_default_by_apr: {exc}")
                    continue
                for x, y, lo, hi in zip(curve["grid"], curve["rate"], curve["ci_lo"], curve["ci_hi"]):
                    rows.append(
                        {"axis": axis, "group": group, "apr": float(x), "default_rate": float(y),
                         "ci_lo": float(lo), "ci_hi": float(hi)}
                    )
        tables["f5_default_by_apr"] = rows

    fits: dict[str, dict] = {}
    if (config.enabled("counterfactuals") or config.enabled("noshop")) and not ds.applications:
        warnings.append("no applications file; counterfactual tables skipped")
    elif config.enabled("counterfactuals") or config.enabled("noshop"):
        if config.enabled("counterfactuals"):
            fit_app = fit_approval_model(ds.applications, blind.probs)
            fit_apr = fit_apr_model(ds.applications, blind.probs)
            for f in (fit_app, fit_apr):
                fits[f.spec_id.value] = {
                    "coefficients": f.coefficients, "standard_errors": f.standard_errors, "n": f.n,
                }
            rows_app, rows_apr = [], []
            for axis in AXES:
                rows_app.extend(_metric_rows(counterfactual_approval_delta(
                    fit_app, ds.applications, blind.probs, aware.probs, ds.demographics,
                    scheme, axis, n_boot=nb, seed=_subseed(seed, "approval_delta"))))
                rows_apr.extend(_metric_rows(counterfactual_apr_delta(
                    fit_apr, ds.applications, blind.probs, aware.probs, ds.demographics,
                    scheme, axis, n_boot=nb, seed=_subseed(seed, "apr_delta"))))
            tables["f7_approval_delta"] = rows_app
            tables["f7_apr_delta"] = rows_apr
        if config.enabled("noshop"):
            try:
                fit_irr = fit_noshop_irr_model(
                    ds.loans, ds.applications, aware.probs, intercept=config.noshop_intercept
                )
                fits[fit_irr.spec_id.value] = {
                    "coefficients": fit_irr.coefficients,
                    "standard_errors": fit_irr.standard_errors,
                    "n": fit_irr.n,
                }
                rows = []
                for axis in AXES:
                    rows.extend(_metric_rows(counterfactual_noshop_irr(
                        fit_irr, ds.applications, aware.probs, ds.demographics, scheme,
                        axis, n_boot=nb, seed=_subseed(seed, "noshop"))))
                tables["f8_counterfactual_irr"] = rows
            except DegenerateInputError as exc:
                warnings.append(f"f8_counterfactual_irr: {exc}")

    metadata = {
        "tool": "lendaudit",
        "version": __version__,
        "config_hash": config.config_hash(),
        "seed": seed,
        "group_scheme": config.group_scheme,
        "n_loans": len(ds.loans),
        "n_applications": len(ds.applications),
        "n_month0_payments_shifted": n_shifted,
        "generated_at": datetime.now(timezone.utc).isoformat(),
        "fits": fits,
    }
    return AuditReport(metadata=metadata, tables=tables, warnings=warnings)


def _atomic_write(path: str, text: str):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_report(report: AuditReport, out_dir: str, render_figures: bool = True) -> dict:
    """Write report.json, one CSV per table, optional figures, and the
    manifest. Returns the manifest dict."""
    os.makedirs(out_dir, exist_ok=True)
    _atomic_write(os.path.join(out_dir, "report.json"), report.to_json() + "\n")
    manifest = {"report": "report.json", "tables": {}, "figures": {}}
    for name, rows in sorted(report.tables.items()):
        path = f"{name}.csv"
        if rows:
            cols = list(rows[0].keys())
            lines = [",".join(cols)]
            lines += [",".join(_csv_cell(r.get(c)) for c in cols) for r in rows]
            text = "\n".join(lines) + "\n"
        else:
            text = ""
        _atomic_write(os.path.join(out_dir, path), text)
        manifest["tables"][name] = path
    if render_figures:
        from .figures import render_all

        fig_dir = os.path.join(out_dir, "figures")
        manifest["figures"] = render_all(report, fig_dir)
    _atomic_write(os.path.join(out_dir, "manifest.json"), json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return manifest


def diff_reports(a: AuditReport, b: AuditReport, tolerance: float = 0.0) -> dict:
    """Per-cell absolute differences above tolerance; {} means equivalent."""
    keys_a, keys_b = set(a.tables), set(b.tables)
    if keys_a != keys_b:
        raise ValidationError(
            f"table keys differ: only-in-a={sorted(keys_a - keys_b)} only-in-b={sorted(keys_b - keys_a)}"
        )
    out: dict[str, list] = {}
    for key in sorted(keys_a):
        rows_a, rows_b = a.tables[key], b.tables[key]
        diffs = []
        if len(rows_a) != len(rows_b):
            diffs.append({"row": None, "column": None, "note": f"row count {len(rows_a)} vs {len(rows_b)}"})
        for i, (ra, rb) in enumerate(zip(rows_a, rows_b)):
            for col in ra.keys() | rb.keys():
                va, vb = ra.get(col), rb.get(col)
                if isinstance(va, (int, float)) and isinstance(vb, (int, float)) and not isinstance(va, bool):
                    if abs(float(va) - float(vb)) > tolerance:
                        diffs.append({"row": i, "column": col, "a": va, "b": vb,
                                      "diff": abs(float(va) - float(vb))})
                elif va != vb:
                    diffs.append({"row": i, "column": col, "a": va, "b": vb})
        if diffs:
            out[key] = diffs
    return out
