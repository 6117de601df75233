"""Counterfactual regressions: how approvals, APRs, and group IRRs would
change if underwriting used the aware risk score instead of the blind one.

Three fits:
* Approval: logistic of first-application approval on the blind score.
* Apr: least squares of log(APR) on blind score and the federal rate.
* NoShopIrr: least squares of realized loan IRR on aware score, loan
  amount, and APR (no intercept by default), trained on loans whose
  requested amount equals the funded amount.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .data import ApplicationRecord, LoanRecord
from .errors import DegenerateInputError, ValidationError
from .fitting import fit_logistic, fit_wls, sigmoid
from .groups import GroupScheme, categories, weight_matrix
from .metrics import N_BOOT_DEFAULT, _boot_matrix, _metrics_from_draws, individual_irrs
from .stats import effective_n


class FitKind(Enum):
    APPROVAL = "Approval"
    APR = "Apr"
    NOSHOP_IRR = "NoShopIrr"


@dataclass(frozen=True)
class RegressionFit:
    spec_id: FitKind
    coefficients: dict[str, float]
    standard_errors: dict[str, float]
    n: int

    def coef_array(self, names) -> np.ndarray:
        return np.array([self.coefficients[n] for n in names])


def first_applications(applications: list[ApplicationRecord]) -> list[ApplicationRecord]:
    """Earliest application per applicant; ties broken by application_id."""
    best: dict[str, ApplicationRecord] = {}
    for app in applications:
        key = app.applicant_id or app.application_id
        month = app.application_month if app.application_month is not None else 0
        cur = best.get(key)
        if cur is None:
            best[key] = app
            continue
        cur_month = cur.application_month if cur.application_month is not None else 0
        if (month, app.application_id) < (cur_month, cur.application_id):
            best[key] = app
    return sorted(best.values(), key=lambda a: a.application_id)


def _scores_for(apps, scores_by_id) -> np.ndarray:
    try:
        return np.array([scores_by_id[a.application_id] for a in apps])
    except KeyError as exc:
        raise ValidationError(f"no risk score for application {exc.args[0]}") from None


def fit_approval_model(applications, blind_scores: dict[str, float]) -> RegressionFit:
    """Logistic MLE of Pr(approved) on the blind risk score, over each
    applicant's first application."""
    apps = first_applications(applications)
    r = _scores_for(apps, blind_scores)
    y = np.array([float(a.approved) for a in apps])
    X = np.column_stack([np.ones(len(apps)), r])
    beta, cov = fit_logistic(X, y)
    se = np.sqrt(np.diag(cov))
    return RegressionFit(
        spec_id=FitKind.APPROVAL,
        coefficients={"intercept": float(beta[0]), "blind_score": float(beta[1])},
        standard_errors={"intercept": float(se[0]), "blind_score": float(se[1])},
        n=len(apps),
    )


def _group_mean_metrics(ids, values, demographics, scheme, axis, kind, n_boot, seed):
    W = weight_matrix(ids, demographics, scheme, axis)
    groups = categories(axis)
    n_eff = np.array([effective_n(W[:, g]) for g in range(len(groups))])
    keep = W.sum(axis=0) > 0
    v = np.asarray(values, dtype=float)

    def stat(idx):
        Wi = W[idx]
        with np.errstate(invalid="ignore", divide="ignore"):
            return (v[idx] @ Wi) / Wi.sum(axis=0)

    with np.errstate(invalid="ignore", divide="ignore"):
        points = (v @ W) / W.sum(axis=0)
    draws = _boot_matrix(stat, len(v), n_boot, seed, len(groups))
    return _metrics_from_draws(points, draws, n_eff, kind, axis, groups, keep)


def approval_deltas(fit: RegressionFit, blind, aware) -> np.ndarray:
    """Per-id change in predicted approval probability, aware minus blind."""
    a, b = fit.coefficients["intercept"], fit.coefficients["blind_score"]
    return sigmoid(a + b * np.asarray(aware)) - sigmoid(a + b * np.asarray(blind))


def counterfactual_approval_delta(fit: RegressionFit, applications,
                                  blind_scores, aware_scores, demographics,
                                  scheme: GroupScheme, axis: str,
                                  n_boot: int = N_BOOT_DEFAULT, seed: int = 0):
    apps = first_applications(applications)
    deltas = approval_deltas(fit, _scores_for(apps, blind_scores), _scores_for(apps, aware_scores))
    ids = [a.application_id for a in apps]
    return _group_mean_metrics(ids, deltas, demographics, scheme, axis,
                               "approval_delta", n_boot, seed)


def fit_apr_model(applications, blind_scores: dict[str, float]) -> RegressionFit:
    """Least squares of log(APR) on blind score and federal rate, over
    approved applications."""
    apps = [a for a in applications if a.approved]
    if not apps:
        raise DegenerateInputError("no approved applications")
    for a in apps:
        if a.offered_apr is None or a.offered_apr <= 0:
            raise ValidationError(f"application {a.application_id}: non-positive APR")
    r = _scores_for(apps, blind_scores)
    f = np.array([a.fed_rate for a in apps])
    y = np.log(np.array([a.offered_apr for a in apps]))
    X = np.column_stack([np.ones(len(apps)), r, f])
    beta, cov, _ = fit_wls(X, y)
    se = np.sqrt(np.diag(cov))
    names = ("intercept", "blind_score", "fed_rate")
    return RegressionFit(
        spec_id=FitKind.APR,
        coefficients=dict(zip(names, map(float, beta))),
        standard_errors=dict(zip(names, map(float, se))),
        n=len(apps),
    )


def apr_deltas(fit: RegressionFit, blind, aware, fed) -> np.ndarray:
    """Per-id change in predicted APR, aware minus blind."""
    a = fit.coefficients["intercept"]
    b = fit.coefficients["blind_score"]
    g = fit.coefficients["fed_rate"]
    fed = np.asarray(fed)
    return np.exp(a + b * np.asarray(aware) + g * fed) - np.exp(a + b * np.asarray(blind) + g * fed)


def counterfactual_apr_delta(fit: RegressionFit, applications, blind_scores,
                             aware_scores, demographics, scheme: GroupScheme,
                             axis: str, n_boot: int = N_BOOT_DEFAULT, seed: int = 0):
    apps = [a for a in applications if a.approved]
    deltas = apr_deltas(
        fit,
        _scores_for(apps, blind_scores),
        _scores_for(apps, aware_scores),
        [a.fed_rate for a in apps],
    )
    ids = [a.application_id for a in apps]
    return _group_mean_metrics(ids, deltas, demographics, scheme, axis,
                               "apr_delta", n_boot, seed)


NOSHOP_REGRESSORS = ("aware_score", "loan_amount", "apr")


def fit_noshop_irr_model(loans: list[LoanRecord], applications, aware_scores,
                         intercept: bool = False) -> RegressionFit:
    """Least squares of realized annualized loan IRR on aware score, loan
    amount, and APR, over funded loans whose requested amount equals the
    amount received. No intercept unless requested."""
    requested = {a.application_id: a.requested_amount for a in applications if a.funded}
    train = [
        l for l in loans
        if l.loan_id in requested
        and abs(requested[l.loan_id] - l.principal) <= 1e-6 * l.principal
    ]
    if len(train) < (4 if intercept else 3):
        raise DegenerateInputError("too few requested==received loans to fit the IRR model")
    rates, valid = individual_irrs(train)
    train = [l for l, ok in zip(train, valid) if ok]
    rates = rates[valid]
    r = np.array([aware_scores[l.loan_id] for l in train])
    amount = np.array([l.principal for l in train])
    apr = np.array([l.apr for l in train])
    cols = [r, amount, apr]
    names = list(NOSHOP_REGRESSORS)
    if intercept:
        cols.insert(0, np.ones(len(train)))
        names.insert(0, "intercept")
    X = np.column_stack(cols)
    beta, cov, _ = fit_wls(X, rates)
    se = np.sqrt(np.diag(cov))
    return RegressionFit(
        spec_id=FitKind.NOSHOP_IRR,
        coefficients=dict(zip(names, map(float, beta))),
        standard_errors=dict(zip(names, map(float, se))),
        n=len(train),
    )


def predict_noshop_irr(fit: RegressionFit, aware, amount, apr) -> np.ndarray:
    out = (
        fit.coefficients["aware_score"] * np.asarray(aware, dtype=float)
        + fit.coefficients["loan_amount"] * np.asarray(amount, dtype=float)
        + fit.coefficients["apr"] * np.asarray(apr, dtype=float)
    )
    if "intercept" in fit.coefficients:
        out = out + fit.coefficients["intercept"]
    return out


def counterfactual_noshop_irr(fit: RegressionFit, applications, aware_scores,
                              demographics, scheme: GroupScheme, axis: str,
                              n_boot: int = N_BOOT_DEFAULT, seed: int = 0):
    """Predicted IRR per approved application assuming everyone accepts the
    loan they initially requested, aggregated to group means."""
    apps = [a for a in applications if a.approved]
    preds = predict_noshop_irr(
        fit,
        _scores_for(apps, aware_scores),
        [a.requested_amount for a in apps],
        [a.offered_apr for a in apps],
    )
    ids = [a.application_id for a in apps]
    return _group_mean_metrics(ids, preds, demographics, scheme, axis,
                               "counterfactual_irr", n_boot, seed)
