"""Group-level audit statistics with percentile-bootstrap confidence
intervals: portfolio IRR, mean individual IRR, principal lost, target
return, default rate, IRR volatility, and the target-return/default decile
curve.

All bootstraps resample loans (keeping each loan's demographic weights)
and are deterministic given the seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import irr as irr_mod
from .amortize import outstanding_after_receipts
from .data import LoanRecord
from .errors import DegenerateInputError, NumericalError, ValidationError
from .groups import GroupScheme, categories, weight_matrix
from .stats import effective_n, weighted_corr, weighted_quantile

N_BOOT_DEFAULT = 1000


@dataclass(frozen=True)
class GroupMetric:
    group: str
    point: float
    ci68: tuple[float, float]
    ci95: tuple[float, float]
    n_effective: float
    metric_kind: str
    axis: str

    def as_row(self) -> dict:
        return {
            "metric": self.metric_kind,
            "axis": self.axis,
            "group": self.group,
            "point": self.point,
            "ci68_lo": self.ci68[0],
            "ci68_hi": self.ci68[1],
            "ci95_lo": self.ci95[0],
            "ci95_hi": self.ci95[1],
            "n_eff": self.n_effective,
        }


def bootstrap_ci(statistic, n_items: int, n_boot: int, seed: int):
    """Percentile bootstrap of ``statistic(resampled_indices)``.

    Returns ``(ci68, ci95)``. Resamples that raise or return non-finite
    values are dropped; more than 1% failures aborts.
    """
    if n_boot < 100:
        raise ValueError("n_boot must be at least 100")
    rng = np.random.default_rng(seed)
    stats = []
    failures = 0
    for _ in range(n_boot):
        idx = rng.integers(0, n_items, size=n_items)
        try:
            s = float(statistic(idx))
        except Exception:
            s = float("nan")
        if np.isfinite(s):
            stats.append(s)
        else:
            failures += 1
    if failures > 0.01 * n_boot:
        raise NumericalError(f"bootstrap statistic failed on {failures}/{n_boot} resamples")
    stats = np.asarray(stats)
    lo68, hi68, lo95, hi95 = np.percentile(stats, [16.0, 84.0, 2.5, 97.5])
    return (float(lo68), float(hi68)), (float(lo95), float(hi95))


def _boot_matrix(stat_fn, n_items: int, n_boot: int, seed: int, n_groups: int):
    """Bootstrap a vector-valued statistic; returns (n_boot, n_groups) draws."""
    rng = np.random.default_rng(seed)
    out = np.empty((n_boot, n_groups))
    for b in range(n_boot):
        idx = rng.integers(0, n_items, size=n_items)
        out[b] = stat_fn(idx)
    return out


def _metrics_from_draws(points, draws, n_eff, kind, axis, groups, keep):
    res = []
    for g, name in enumerate(groups):
        if not keep[g]:
            continue
        col = draws[:, g]
        col = col[np.isfinite(col)]
        if col.size < 0.5 * draws.shape[0]:
            raise NumericalError(f"bootstrap degenerate for group {name}")
        lo68, hi68, lo95, hi95 = np.percentile(col, [16.0, 84.0, 2.5, 97.5])
        res.append(
            GroupMetric(
                group=name,
                point=float(points[g]),
                ci68=(float(lo68), float(hi68)),
                ci95=(float(lo95), float(hi95)),
                n_effective=float(n_eff[g]),
                metric_kind=kind,
                axis=axis,
            )
        )
    return res


def _group_setup(loans, demographics, scheme, axis):
    ids = [l.loan_id for l in loans]
    W = weight_matrix(ids, demographics, scheme, axis)
    groups = categories(axis)
    n_eff = np.array([effective_n(W[:, g]) for g in range(len(groups))])
    keep = W.sum(axis=0) > 0
    return W, groups, n_eff, keep


def individual_irrs(loans: list[LoanRecord]):
    """Annualized IRR per loan plus a validity mask (False = NoSignChange)."""
    rates = np.empty(len(loans))
    valid = np.ones(len(loans), dtype=bool)
    for i, loan in enumerate(loans):
        res = irr_mod.irr(loan.cashflow)
        if res.status is irr_mod.IrrStatus.NO_SIGN_CHANGE:
            valid[i] = False
            rates[i] = np.nan
        else:
            rates[i] = res.annualized_rate
    return rates, valid


def portfolio_irr_by_group(loans, demographics, scheme: GroupScheme, axis: str,
                           n_boot: int = N_BOOT_DEFAULT, seed: int = 0):
    """Annualized IRR of each group's aggregate cashflow (probability- or
    argmax-weighted), with loan-level bootstrap CIs."""
    if not loans:
        raise DegenerateInputError("no loans")
    W, groups, n_eff, keep = _group_setup(loans, demographics, scheme, axis)
    M, _ = irr_mod.calendar_matrix(loans)
    n = len(loans)

    def agg_irr(weighted_counts, g, start):
        agg = weighted_counts @ M
        res = irr_mod.irr(agg, newton_start=start[g])
        if res.status is irr_mod.IrrStatus.CONVERGED:
            start[g] = res.monthly_rate
        return res.annualized_rate

    warm = [0.01] * len(groups)
    points = np.full(len(groups), np.nan)
    for g in range(len(groups)):
        if keep[g]:
            points[g] = agg_irr(W[:, g], g, warm)

    warm_b = list(warm)

    def stat(idx):
        counts = np.bincount(idx, minlength=n).astype(float)
        out = np.full(len(groups), np.nan)
        for g in range(len(groups)):
            if keep[g]:
                out[g] = agg_irr(counts * W[:, g], g, warm_b)
        return out

    draws = _boot_matrix(stat, n, n_boot, seed, len(groups))
    return _metrics_from_draws(points, draws, n_eff, "portfolio_irr", axis, groups, keep)


def _weighted_mean_metric(values, loans, demographics, scheme, axis, kind,
                          n_boot, seed, valid=None):
    """Shared driver: group-weighted mean of per-loan values + bootstrap."""
    W, groups, n_eff, keep = _group_setup(loans, demographics, scheme, axis)
    v = np.asarray(values, dtype=float)
    if valid is not None:
        W = W[valid]
        v = v[valid]
    n = v.size
    if n == 0:
        raise DegenerateInputError("no valid loans for metric " + kind)
    keep = keep & (W.sum(axis=0) > 0)

    def stat(idx):
        Wi = W[idx]
        tot = Wi.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return (v[idx] @ Wi) / tot

    tot = W.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        points = (v @ W) / tot
    draws = _boot_matrix(stat, n, n_boot, seed, len(groups))
    return _metrics_from_draws(points, draws, n_eff, kind, axis, groups, keep)


def mean_individual_irr_by_group(loans, demographics, scheme: GroupScheme, axis: str,
                                 n_boot: int = N_BOOT_DEFAULT, seed: int = 0):
    """Group-weighted mean of per-loan annualized IRRs. Immediate defaults
    enter at -100%; NoSignChange loans are excluded."""
    rates, valid = individual_irrs(loans)
    return _weighted_mean_metric(rates, loans, demographics, scheme, axis,
                                 "mean_individual_irr", n_boot, seed, valid=valid)


def loan_loss_fractions(loans: list[LoanRecord]) -> np.ndarray:
    """Per-loan unpaid-principal fraction under the contractual amortization
    ledger at the contract APR."""
    out = np.empty(len(loans))
    for i, loan in enumerate(loans):
        if loan.defaulted and loan.default_month is None:
            raise ValidationError(f"loan {loan.loan_id}: defaulted without default_month")
        unpaid = outstanding_after_receipts(loan.principal, loan.apr, loan.cashflow.amounts[1:])
        out[i] = min(1.0, max(0.0, unpaid / loan.principal))
    return out


def principal_lost_by_group(loans, demographics, scheme: GroupScheme, axis: str,
                            n_boot: int = N_BOOT_DEFAULT, seed: int = 0):
    """Group ratio sum(w * unpaid principal) / sum(w * principal)."""
    W, groups, n_eff, keep = _group_setup(loans, demographics, scheme, axis)
    frac = loan_loss_fractions(loans)
    p0 = np.array([l.principal for l in loans])
    lost = frac * p0
    n = len(loans)

    def stat(idx):
        Wi = W[idx]
        with np.errstate(invalid="ignore", divide="ignore"):
            return (lost[idx] @ Wi) / (p0[idx] @ Wi)

    with np.errstate(invalid="ignore", divide="ignore"):
        points = (lost @ W) / (p0 @ W)
    draws = _boot_matrix(stat, n, n_boot, seed, len(groups))
    return _metrics_from_draws(points, draws, n_eff, "principal_lost", axis, groups, keep)


def cumulative_loss_rate(principal: float, default_pmf, remaining_principal, recovery) -> float:
    """Expected uncollected fraction of principal:
    (1/P0) * sum_t f(t) * (P_t - R_t)."""
    f = np.asarray(default_pmf, dtype=float)
    p = np.asarray(remaining_principal, dtype=float)
    r = np.asarray(recovery, dtype=float)
    if np.any(f < 0) or np.any(p < 0) or np.any(r < 0):
        raise ValidationError("default pmf, principal path and recovery must be non-negative")
    if f.sum() > 1.0 + 1e-9:
        raise NumericalError(f"default probabilities sum to {f.sum()} > 1")
    return float(np.sum(f * (p - r)) / principal)


def target_return_by_group(loans, demographics, scheme, axis,
                           n_boot: int = N_BOOT_DEFAULT, seed: int = 0):
    if any(l.target_return is None for l in loans):
        raise ValidationError("target_return missing on some loans")
    v = np.array([l.target_return for l in loans])
    return _weighted_mean_metric(v, loans, demographics, scheme, axis,
                                 "target_return", n_boot, seed)


def default_rate_by_group(loans, demographics, scheme, axis,
                          n_boot: int = N_BOOT_DEFAULT, seed: int = 0):
    v = np.array([float(l.defaulted) for l in loans])
    return _weighted_mean_metric(v, loans, demographics, scheme, axis,
                                 "default_rate", n_boot, seed)


def irr_volatility_by_group(loans, demographics, scheme, axis,
                            n_boot: int = N_BOOT_DEFAULT, seed: int = 0):
    """Weighted population standard deviation of individual IRRs."""
    rates, valid = individual_irrs(loans)
    W, groups, n_eff, keep = _group_setup(loans, demographics, scheme, axis)
    W, v = W[valid], rates[valid]
    n = v.size
    keep = keep & (W.sum(axis=0) > 0)

    def vol(Wi, vi):
        tot = Wi.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            m = (vi @ Wi) / tot
            var = ((vi[:, None] - m[None, :]) ** 2 * Wi).sum(axis=0) / tot
        return np.sqrt(var)

    points = vol(W, v)
    draws = _boot_matrix(lambda idx: vol(W[idx], v[idx]), n, n_boot, seed, len(groups))
    return _metrics_from_draws(points, draws, n_eff, "irr_volatility", axis, groups, keep)


def target_return_default_curve(loans, demographics, scheme: GroupScheme, axis: str,
                                group: str, n_bins: int = 10):
    """Within-group decile curve of mean target return vs mean default rate.

    Returns ``(points, correlation)`` where points is a list of dicts with
    keys bin, target_return, default_rate, weight; correlation is the
    weighted Pearson correlation (nan when degenerate).
    """
    if any(l.target_return is None for l in loans):
        raise ValidationError("target_return missing on some loans")
    gi = categories(axis).index(group)
    ids = [l.loan_id for l in loans]
    w = weight_matrix(ids, demographics, scheme, axis)[:, gi]
    tr = np.array([l.target_return for l in loans])
    d = np.array([float(l.defaulted) for l in loans])
    keep = w > 0
    w, tr, d = w[keep], tr[keep], d[keep]
    if effective_n(w) < n_bins:
        raise DegenerateInputError(
            f"group {group}: effective sample {effective_n(w):.1f} below {n_bins}; use coarser bins"
        )
    qs = np.linspace(0, 1, n_bins + 1)[1:-1]
    edges = np.unique(weighted_quantile(tr, w, qs))
    bins = np.searchsorted(edges, tr, side="right")
    points = []
    for b in range(len(edges) + 1):
        mask = bins == b
        tw = w[mask].sum()
        if tw <= 0:
            continue
        points.append(
            {
                "bin": b,
                "target_return": float(np.dot(tr[mask], w[mask]) / tw),
                "default_rate": float(np.dot(d[mask], w[mask]) / tw),
                "weight": float(tw),
            }
        )
    corr = weighted_corr(tr, d, w)
    return points, corr
