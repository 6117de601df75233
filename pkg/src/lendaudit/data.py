"""Domain types and CSV ingestion.

File formats (all CSV, UTF-8, header row required, currency in file units,
dates as ISO ``YYYY-MM``):

* loans file: ``loan_id,origination_date,term_months,principal,apr,defaulted,
  default_month,target_return`` plus optional feature columns ``f_0..f_{k-1}``;
  cashflows come in a companion file, either long format
  (``loan_id,month,amount``, multiple rows per loan) or wide format
  (``loan_id,m0,m1,...``).
* demographics file: ``id,p_white,p_black,p_hispanic,p_asian,p_other,
  p_woman,p_man``.
* applications file: ``application_id,requested_amount,approved,offered_apr,
  funded,fed_rate`` plus feature columns ``f_0..f_{k-1}`` and optional
  ``applicant_id,application_date``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import SchemaError, ValidationError

RACE_CATEGORIES = ("White", "Black", "Hispanic", "Asian", "Other")
GENDER_CATEGORIES = ("Woman", "Man")

#: months past term_months in which a default may still be recorded
DEFAULT_GRACE_MONTHS = 6

_RENORM_TOL = 1e-6
_PRINCIPAL_TOL = 1e-6


def parse_month(s: str) -> int:
    """ISO ``YYYY-MM`` -> absolute month index (year*12 + month-1)."""
    try:
        year, month = s.split("-")
        y, m = int(year), int(month)
    except (ValueError, AttributeError):
        raise ValidationError(f"bad month {s!r}, expected YYYY-MM") from None
    if not 1 <= m <= 12:
        raise ValidationError(f"bad month {s!r}, expected YYYY-MM")
    return y * 12 + (m - 1)


def format_month(idx: int) -> str:
    return f"{idx // 12:04d}-{idx % 12 + 1:02d}"


@dataclass(frozen=True)
class CashflowVector:
    """Monthly net cashflows from loan origination; entry 0 is the
    (negative) disbursement, later entries are net receipts of any sign."""

    amounts: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.amounts, dtype=float)
        object.__setattr__(self, "amounts", arr)
        if arr.ndim != 1 or arr.size < 2:
            raise ValidationError("cashflow needs at least 2 monthly entries")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("cashflow contains non-finite amounts")
        if arr[0] >= 0:
            raise ValidationError("cashflow must start with a negative disbursement")

    def __len__(self):
        return self.amounts.size


@dataclass(frozen=True)
class DemographicWeights:
    """Per-person probability vectors over race and gender categories."""

    race_probs: np.ndarray
    gender_probs: np.ndarray

    def __post_init__(self):
        for name, probs, cats in (
            ("race", self.race_probs, RACE_CATEGORIES),
            ("gender", self.gender_probs, GENDER_CATEGORIES),
        ):
            arr = np.asarray(probs, dtype=float)
            object.__setattr__(self, f"{name}_probs", arr)
            if arr.shape != (len(cats),):
                raise ValidationError(f"{name} probabilities must have length {len(cats)}")
            if np.any(arr < 0):
                raise ValidationError(f"negative {name} probability")
            if abs(arr.sum() - 1.0) > 1e-9:
                raise ValidationError(f"{name} probabilities must sum to 1")


@dataclass
class LoanRecord:
    loan_id: str
    origination_month: int  # absolute month index, see parse_month
    term_months: int
    principal: float
    apr: float
    cashflow: CashflowVector
    features: np.ndarray
    defaulted: bool
    default_month: int | None = None
    target_return: float | None = None

    def validate(self, grace: int = DEFAULT_GRACE_MONTHS):
        if self.principal <= 0:
            raise ValidationError(f"loan {self.loan_id}: principal must be positive")
        if not 0 < self.apr < 1:
            raise ValidationError(f"loan {self.loan_id}: apr must be in (0, 1)")
        if self.term_months <= 0:
            raise ValidationError(f"loan {self.loan_id}: term_months must be positive")
        rel = abs(self.principal + self.cashflow.amounts[0]) / self.principal
        if rel > _PRINCIPAL_TOL:
            raise ValidationError(
                f"loan {self.loan_id}: principal {self.principal} does not match "
                f"month-0 disbursement {self.cashflow.amounts[0]}"
            )
        if self.defaulted:
            if self.default_month is None:
                raise ValidationError(f"loan {self.loan_id}: defaulted without default_month")
            if not 1 <= self.default_month <= self.term_months + grace:
                raise ValidationError(
                    f"loan {self.loan_id}: default_month {self.default_month} outside "
                    f"1..{self.term_months + grace}"
                )
        elif self.default_month is not None:
            raise ValidationError(f"loan {self.loan_id}: default_month on non-defaulted loan")


@dataclass
class ApplicationRecord:
    application_id: str
    features: np.ndarray
    requested_amount: float
    approved: bool
    funded: bool
    fed_rate: float
    offered_apr: float | None = None
    applicant_id: str | None = None
    application_month: int | None = None

    def validate(self):
        if self.funded and not self.approved:
            raise ValidationError(f"application {self.application_id}: funded but not approved")
        if self.approved:
            if self.offered_apr is None or not 0 < self.offered_apr < 1:
                raise ValidationError(
                    f"application {self.application_id}: approved without a valid offered_apr"
                )
        if self.requested_amount <= 0:
            raise ValidationError(f"application {self.application_id}: bad requested_amount")


@dataclass
class Dataset:
    loans: list[LoanRecord] = field(default_factory=list)
    applications: list[ApplicationRecord] = field(default_factory=list)
    demographics: dict[str, DemographicWeights] = field(default_factory=dict)

    def validate(self):
        seen = set()
        for loan in self.loans:
            if loan.loan_id in seen:
                raise ValidationError(f"duplicate loan_id {loan.loan_id}")
            seen.add(loan.loan_id)
            if loan.loan_id not in self.demographics:
                raise ValidationError(f"loan {loan.loan_id} has no demographic weights")
        app_seen = set()
        for app in self.applications:
            if app.application_id in app_seen:
                raise ValidationError(f"duplicate application_id {app.application_id}")
            app_seen.add(app.application_id)
            if app.application_id not in self.demographics:
                raise ValidationError(
                    f"application {app.application_id} has no demographic weights"
                )
        lengths = {len(l.features) for l in self.loans} | {len(a.features) for a in self.applications}
        if len(lengths) > 1:
            raise ValidationError(f"inconsistent feature vector lengths: {sorted(lengths)}")
        return self


@dataclass
class LoanIngest:
    loans: list[LoanRecord]
    n_shifted: int  # loans whose month-0 payment was moved to month 1


def _require_columns(df: pd.DataFrame, cols, path):
    missing = [c for c in cols if c not in df.columns]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")


def _feature_columns(df: pd.DataFrame) -> list[str]:
    cols = [c for c in df.columns if c.startswith("f_")]
    return sorted(cols, key=lambda c: int(c.split("_", 1)[1]))


def _read_cashflows(path) -> dict[str, np.ndarray]:
    """Companion cashflow file, long or wide format, -> per-loan amount arrays."""
    df = pd.read_csv(path, dtype={"loan_id": str}, float_precision="round_trip")
    if "month" in df.columns and "amount" in df.columns:
        out = {}
        for loan_id, grp in df.groupby("loan_id", sort=False):
            months = grp["month"].to_numpy(dtype=int)
            if np.any(months < 0):
                raise ValidationError(f"loan {loan_id}: negative month index in cashflows")
            arr = np.zeros(months.max() + 1)
            np.add.at(arr, months, grp["amount"].to_numpy(dtype=float))
            out[str(loan_id)] = arr
        return out
    wide = [c for c in df.columns if c.startswith("m") and c[1:].isdigit()]
    if not wide:
        raise SchemaError(f"{path}: expected long columns (loan_id,month,amount) or wide m0,m1,...")
    wide.sort(key=lambda c: int(c[1:]))
    mat = df[wide].to_numpy(dtype=float)
    mat = np.nan_to_num(mat, nan=np.nan)  # keep NaN; validated per record below
    return {str(lid): row for lid, row in zip(df["loan_id"], mat)}


def ingest_loans(loans_path, cashflows_path, schema: dict[str, str] | None = None) -> LoanIngest:
    """Read and validate the loans file plus its companion cashflow file.

    A positive net payment recorded in month 0 (on top of the disbursement)
    is shifted into month 1, so immediate prepayments always yield a
    well-defined IRR; the number of shifted loans is reported.

    ``schema`` optionally maps expected column names to the names actually
    present in the file.
    """
    df = pd.read_csv(loans_path, dtype={"loan_id": str}, float_precision="round_trip")
    if schema:
        df = df.rename(columns={v: k for k, v in schema.items()})
    _require_columns(
        df,
        ["loan_id", "origination_date", "term_months", "principal", "apr", "defaulted"],
        loans_path,
    )
    cashflows = _read_cashflows(cashflows_path)
    feat_cols = _feature_columns(df)

    loans, n_shifted = [], 0
    for row in df.itertuples(index=False):
        loan_id = str(row.loan_id)
        if loan_id not in cashflows:
            raise ValidationError(f"loan {loan_id}: no cashflow rows")
        amounts = np.array(cashflows[loan_id], dtype=float)
        if not np.all(np.isfinite(amounts)):
            raise ValidationError(f"loan {loan_id}: non-finite cashflow amount")
        principal = float(row.principal)
        if principal <= 0 or not math.isfinite(principal):
            raise ValidationError(f"loan {loan_id}: bad principal {principal}")
        # move any month-0 payment (amount in excess of -principal) to month 1
        pay0 = amounts[0] + principal
        if pay0 / principal < -_PRINCIPAL_TOL:
            raise ValidationError(
                f"loan {loan_id}: month-0 amount {amounts[0]} below -principal"
            )
        if pay0 / principal > _PRINCIPAL_TOL:
            if amounts.size < 2:
                amounts = np.append(amounts, 0.0)
            amounts[0] = -principal
            amounts[1] += pay0
            n_shifted += 1
        if amounts.size < 2:
            amounts = np.append(amounts, 0.0)

        default_month = getattr(row, "default_month", None)
        if default_month is not None and (isinstance(default_month, float) and math.isnan(default_month)):
            default_month = None
        target_return = getattr(row, "target_return", None)
        if target_return is not None and (isinstance(target_return, float) and math.isnan(target_return)):
            target_return = None

        loan = LoanRecord(
            loan_id=loan_id,
            origination_month=parse_month(str(row.origination_date)),
            term_months=int(row.term_months),
            principal=principal,
            apr=float(row.apr),
            cashflow=CashflowVector(amounts),
            features=np.array([getattr(row, c) for c in feat_cols], dtype=float),
            defaulted=bool(row.defaulted),
            default_month=None if default_month is None else int(default_month),
            target_return=None if target_return is None else float(target_return),
        )
        loan.validate()
        loans.append(loan)
    return LoanIngest(loans=loans, n_shifted=n_shifted)


DEMOGRAPHIC_COLUMNS = ("p_white", "p_black", "p_hispanic", "p_asian", "p_other", "p_woman", "p_man")


def ingest_demographics(path) -> dict[str, DemographicWeights]:
    """Read the demographics file; rows whose probabilities are off unity by
    at most 1e-6 are renormalized, larger deviations are an error."""
    df = pd.read_csv(path, dtype={"id": str}, float_precision="round_trip")
    _require_columns(df, ["id", *DEMOGRAPHIC_COLUMNS], path)
    out: dict[str, DemographicWeights] = {}
    race = df[list(DEMOGRAPHIC_COLUMNS[:5])].to_numpy(dtype=float)
    gender = df[list(DEMOGRAPHIC_COLUMNS[5:])].to_numpy(dtype=float)
    for i, pid in enumerate(df["id"]):
        pid = str(pid)
        if pid in out:
            raise ValidationError(f"duplicate demographic id {pid}")
        rp, gp = race[i].copy(), gender[i].copy()
        for name, vec in (("race", rp), ("gender", gp)):
            if np.any(vec < 0) or not np.all(np.isfinite(vec)):
                raise ValidationError(f"id {pid}: invalid {name} probability")
            dev = abs(vec.sum() - 1.0)
            if dev > _RENORM_TOL:
                raise ValidationError(
                    f"id {pid}: {name} probabilities sum to {vec.sum():.8f}, off by more than {_RENORM_TOL}"
                )
            # leave float-rounding residue alone so round-trips stay bit-exact
            if dev > 1e-12:
                vec /= vec.sum()
        out[pid] = DemographicWeights(race_probs=rp, gender_probs=gp)
    return out


def ingest_applications(path) -> list[ApplicationRecord]:
    df = pd.read_csv(path, dtype={"application_id": str}, float_precision="round_trip")
    _require_columns(
        df, ["application_id", "requested_amount", "approved", "offered_apr", "funded", "fed_rate"], path
    )
    feat_cols = _feature_columns(df)
    apps = []
    for row in df.itertuples(index=False):
        offered = row.offered_apr
        if isinstance(offered, float) and math.isnan(offered):
            offered = None
        applicant = getattr(row, "applicant_id", None)
        app_date = getattr(row, "application_date", None)
        app = ApplicationRecord(
            application_id=str(row.application_id),
            features=np.array([getattr(row, c) for c in feat_cols], dtype=float),
            requested_amount=float(row.requested_amount),
            approved=bool(row.approved),
            funded=bool(row.funded),
            fed_rate=float(row.fed_rate),
            offered_apr=None if offered is None else float(offered),
            applicant_id=None if applicant is None or (isinstance(applicant, float) and math.isnan(applicant)) else str(applicant),
            application_month=None if app_date is None or (isinstance(app_date, float) and math.isnan(app_date)) else parse_month(str(app_date)),
        )
        app.validate()
        apps.append(app)
    return apps


# --- writers (repr floats, so ingest -> write -> ingest is bit-exact) ---


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_loans(loans: list[LoanRecord], loans_path, cashflows_path):
    n_feat = len(loans[0].features) if loans else 0
    feat_cols = [f"f_{i}" for i in range(n_feat)]
    with open(loans_path, "w", encoding="utf-8") as fh:
        fh.write(
            "loan_id,origination_date,term_months,principal,apr,defaulted,default_month,target_return"
            + ("," + ",".join(feat_cols) if feat_cols else "")
            + "\n"
        )
        for ln in loans:
            cells = [
                ln.loan_id,
                format_month(ln.origination_month),
                str(ln.term_months),
                _fmt(ln.principal),
                _fmt(ln.apr),
                str(ln.defaulted),
                "" if ln.default_month is None else str(ln.default_month),
                _fmt(ln.target_return),
            ] + [_fmt(v) for v in ln.features]
            fh.write(",".join(cells) + "\n")
    with open(cashflows_path, "w", encoding="utf-8") as fh:
        fh.write("loan_id,month,amount\n")
        for ln in loans:
            for month, amount in enumerate(ln.cashflow.amounts):
                fh.write(f"{ln.loan_id},{month},{_fmt(amount)}\n")


def write_demographics(demographics: dict[str, DemographicWeights], path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("id," + ",".join(DEMOGRAPHIC_COLUMNS) + "\n")
        for pid, demo in demographics.items():
            cells = [pid] + [_fmt(v) for v in demo.race_probs] + [_fmt(v) for v in demo.gender_probs]
            fh.write(",".join(cells) + "\n")


def write_applications(apps: list[ApplicationRecord], path):
    n_feat = len(apps[0].features) if apps else 0
    feat_cols = [f"f_{i}" for i in range(n_feat)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            "application_id,applicant_id,application_date,requested_amount,approved,offered_apr,funded,fed_rate"
            + ("," + ",".join(feat_cols) if feat_cols else "")
            + "\n"
        )
        for app in apps:
            cells = [
                app.application_id,
                app.applicant_id or "",
                "" if app.application_month is None else format_month(app.application_month),
                _fmt(app.requested_amount),
                str(app.approved),
                _fmt(app.offered_apr),
                str(app.funded),
                _fmt(app.fed_rate),
            ] + [_fmt(v) for v in app.features]
            fh.write(",".join(cells) + "\n")
