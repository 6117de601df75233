"""Deterministic synthetic lending market.

Every applicant gets opaque features, a feature-implied default
probability, and a group assignment. The lender prices from its
*perceived* risk, which can be miscalibrated per group: the config's
signed shift satisfies perceived = true + shift, so a negative shift means
the group's true risk is higher than the lender believes. Approved loans
are priced so that the expected IRR under perceived risk hits the
target-return curve (bisection on APR), defaults are realized from the
true hazard, and cashflows follow the level-payment schedule truncated at
default.

The generator doubles as the oracle for the audit pipeline: true
per-applicant risk and analytic expected group returns are exposed.
"""

from __future__ import annotations

import functools
import zlib
from dataclasses import dataclass

import numpy as np

from . import irr as irr_mod
from .amortize import annuity_payment
from .data import (
    ApplicationRecord,
    CashflowVector,
    Dataset,
    DemographicWeights,
    GENDER_CATEGORIES,
    LoanRecord,
    RACE_CATEGORIES,
)
from .errors import ValidationError, NumericalError
from .groups import GroupScheme, categories

DEFAULT_RISK_WEIGHTS = (1.1, -0.8, 0.6, 0.45, 0.0, 0.35, 0.0, 0.0)

#: piecewise-linear (cumulative loss rate, target annual return) knots;
#: convex-increasing, deliberately synthetic.
DEFAULT_TARGET_CURVE = ((0.0, 0.05), (0.05, 0.08), (0.15, 0.14), (0.40, 0.30), (1.0, 0.80))


@dataclass(frozen=True)
class MarketConfig:
    n_applicants: int = 10_000
    seed: int = 0
    race_mix: tuple = (0.55, 0.15, 0.15, 0.10, 0.05)
    gender_mix: tuple = (0.5, 0.5)
    n_features: int = 8
    risk_weights: tuple = DEFAULT_RISK_WEIGHTS
    risk_intercept: float = -2.3
    # signed per-group shift on perceived risk: perceived = true + shift
    miscalibration_race: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)
    miscalibration_gender: tuple = (0.0, 0.0)
    target_return_knots: tuple = DEFAULT_TARGET_CURVE
    approval_threshold: float = 0.30
    approval_noise: float = 0.05  # logit width; 0 = hard cutoff
    shopping_strength: float = 0.0  # 0 = Off; >0 = FavorableSelection
    term_months: int = 36
    demo_mixing: float = 0.0  # 0 = one-hot proxies; (0,1) mixes toward the base mix
    amount_log_mean: float = 9.2
    amount_log_sigma: float = 0.4
    fed_rate_range: tuple = (0.01, 0.05)
    counteroffer_rate: float = 0.0  # funded loans re-sized below request
    prepay_hazard: float = 0.0
    base_year: int = 2019

    def validate(self):
        if abs(sum(self.race_mix) - 1) > 1e-9 or abs(sum(self.gender_mix) - 1) > 1e-9:
            raise ValidationError("group mixes must sum to 1")
        losses = [k[0] for k in self.target_return_knots]
        rets = [k[1] for k in self.target_return_knots]
        if sorted(losses) != list(losses) or sorted(rets) != list(rets):
            raise ValidationError("target-return curve must be monotone non-decreasing")
        if not 0 <= self.demo_mixing < 1:
            raise ValidationError("demo_mixing must be in [0, 1)")
        return self


def target_return_curve(config: MarketConfig, loss_rate):
    xs = np.array([k[0] for k in config.target_return_knots])
    ys = np.array([k[1] for k in config.target_return_knots])
    return np.interp(loss_rate, xs, ys)


def _stream(config: MarketConfig, name: str) -> np.random.Generator:
    # independent named substream: identical output at any evaluation order
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(key,)))


@dataclass
class MarketTruth:
    """Everything the generator knows, keyed by applicant index."""

    config: MarketConfig
    ids: list[str]
    race_idx: np.ndarray
    gender_idx: np.ndarray
    features: np.ndarray
    q_true: np.ndarray  # cumulative default probability actually used
    q_perceived: np.ndarray  # the lender's (feature-implied) estimate
    approved: np.ndarray
    funded: np.ndarray
    apr: np.ndarray  # nan where not approved
    target_return: np.ndarray  # nan where not approved
    principal: np.ndarray
    requested: np.ndarray
    fed_rate: np.ndarray
    origination_month: np.ndarray
    default_month: np.ndarray  # 0 = no default
    prepay_month: np.ndarray  # 0 = no prepayment

    def monthly_hazard_true(self) -> np.ndarray:
        return 1.0 - (1.0 - self.q_true) ** (1.0 / self.config.term_months)


def _price_loans(config: MarketConfig, q_perc: np.ndarray, fed: np.ndarray) -> np.ndarray:
    """Vectorized bisection on APR so the expected IRR under perceived risk
    hits fed_rate + target_return_curve(expected cumulative loss rate)."""
    T = config.term_months
    t = np.arange(1, T + 1)
    h = 1.0 - (1.0 - q_perc) ** (1.0 / T)
    surv = (1.0 - h[:, None]) ** t[None, :]  # P(alive through month t)
    pmf = (1.0 - h[:, None]) ** (t[None, :] - 1) * h[:, None]  # default in month t

    def npv_gap(apr):
        r = apr / 12.0
        growth = (1.0 + r[:, None]) ** (t[None, :] - 1)  # (1+r)^(t-1)
        # per unit principal: level payment a = r / (1 - (1+r)^-T)
        a = r / (1.0 - (1.0 + r) ** (-T))
        # scheduled balance entering month t (after t-1 payments), per unit principal
        bal = growth - a[:, None] * (growth - 1.0) / r[:, None]
        loss = np.sum(pmf * np.clip(bal, 0.0, None), axis=1)
        target = fed + target_return_curve(config, loss)
        m = (1.0 + target) ** (1.0 / 12.0) - 1.0
        disc = (1.0 + m[:, None]) ** (-t[None, :])
        pv = a * np.sum(surv * disc, axis=1)
        return pv - 1.0  # expected NPV per unit principal at the target rate

    lo = np.full(q_perc.shape, 1e-4)
    hi = np.full(q_perc.shape, 3.0)
    if np.any(npv_gap(hi) < 0):
        raise NumericalError("target return unreachable: APR bracket failed at 300%")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        gap = npv_gap(mid)
        lo = np.where(gap < 0, mid, lo)
        hi = np.where(gap < 0, hi, mid)
    apr = 0.5 * (lo + hi)
    if np.any(apr >= 1.0):
        raise NumericalError("pricing produced APR >= 100%; lower the target curve or risk")
    return apr


def _target_of(config, q_perc, fed, apr):
    T = config.term_months
    t = np.arange(1, T + 1)
    h = 1.0 - (1.0 - q_perc) ** (1.0 / T)
    pmf = (1.0 - h[:, None]) ** (t[None, :] - 1) * h[:, None]
    r = apr / 12.0
    growth = (1.0 + r[:, None]) ** (t[None, :] - 1)
    a = r / (1.0 - (1.0 + r) ** (-T))
    bal = growth - a[:, None] * (growth - 1.0) / r[:, None]
    loss = np.sum(pmf * np.clip(bal, 0.0, None), axis=1)
    return fed + target_return_curve(config, loss)


@functools.lru_cache(maxsize=8)
def market_truth(config: MarketConfig) -> MarketTruth:
    config.validate()
    n = config.n_applicants
    T = config.term_months

    race = _stream(config, "race").choice(len(RACE_CATEGORIES), size=n, p=config.race_mix)
    gender = _stream(config, "gender").choice(len(GENDER_CATEGORIES), size=n, p=config.gender_mix)
    X = _stream(config, "features").standard_normal((n, config.n_features))

    w = np.asarray(config.risk_weights, dtype=float)
    base = 1.0 / (1.0 + np.exp(-(config.risk_intercept + X @ w)))
    q_perc = np.clip(base, 1e-4, 0.98)
    shift = (
        np.asarray(config.miscalibration_race)[race]
        + np.asarray(config.miscalibration_gender)[gender]
    )
    q_true = np.clip(q_perc - shift, 1e-4, 0.98)

    if config.approval_noise > 0:
        p_app = 1.0 / (1.0 + np.exp(-(config.approval_threshold - q_perc) / config.approval_noise))
    else:
        p_app = (q_perc < config.approval_threshold).astype(float)
    approved = _stream(config, "approval").random(n) < p_app

    fed = _stream(config, "fed").uniform(*config.fed_rate_range, size=n)
    requested = np.exp(
        config.amount_log_mean + config.amount_log_sigma * _stream(config, "amount").standard_normal(n)
    )
    origination = config.base_year * 12 + _stream(config, "orig").integers(0, 12, size=n)

    apr = np.full(n, np.nan)
    target = np.full(n, np.nan)
    if approved.any():
        apr[approved] = _price_loans(config, q_perc[approved], fed[approved])
        target[approved] = _target_of(config, q_perc[approved], fed[approved], apr[approved])

    # favorable-selection shopping: low-true-risk approved applicants walk away
    funded = approved.copy()
    if config.shopping_strength > 0 and approved.any():
        qa = q_true[approved]
        rank = np.empty(qa.size)
        rank[np.argsort(qa, kind="stable")] = np.arange(qa.size)
        pct = rank / max(qa.size - 1, 1)
        drop = config.shopping_strength * (1.0 - pct)
        stay = _stream(config, "shopping").random(qa.size) >= drop
        funded[approved] = stay

    principal = requested.copy()
    if config.counteroffer_rate > 0 and funded.any():
        nf = int(funded.sum())
        cs = _stream(config, "counter")
        hit = cs.random(nf) < config.counteroffer_rate
        scale = cs.uniform(0.5, 0.9, size=nf)
        adj = np.where(hit, scale, 1.0)
        principal[funded] = requested[funded] * adj

    # realize default / prepayment months from the true hazard
    h_true = 1.0 - (1.0 - q_true) ** (1.0 / T)
    u = _stream(config, "default").random(n)
    with np.errstate(divide="ignore"):
        dm = np.ceil(np.log(u) / np.log(1.0 - h_true)).astype(int)
    default_month = np.where((dm >= 1) & (dm <= T), dm, 0)
    prepay_month = np.zeros(n, dtype=int)
    if config.prepay_hazard > 0:
        up = _stream(config, "prepay").random(n)
        pm = np.ceil(np.log(up) / np.log(1.0 - config.prepay_hazard)).astype(int)
        prepay_month = np.where((pm >= 1) & (pm < T), pm, 0)

    ids = [f"A{i:06d}" for i in range(n)]
    return MarketTruth(
        config=config,
        ids=ids,
        race_idx=race,
        gender_idx=gender,
        features=X,
        q_true=q_true,
        q_perceived=q_perc,
        approved=approved,
        funded=funded,
        apr=apr,
        target_return=target,
        principal=principal,
        requested=requested,
        fed_rate=fed,
        origination_month=origination,
        default_month=default_month,
        prepay_month=prepay_month,
    )


def _demographic_weights(config: MarketConfig, race_i: int, gender_i: int) -> DemographicWeights:
    lam = config.demo_mixing
    rp = lam * np.asarray(config.race_mix, dtype=float)
    rp[race_i] += 1.0 - lam
    gp = lam * np.asarray(config.gender_mix, dtype=float)
    gp[gender_i] += 1.0 - lam
    return DemographicWeights(race_probs=rp / rp.sum(), gender_probs=gp / gp.sum())


def _loan_cashflow(principal, apr, T, default_month, prepay_month):
    """-P at month 0, scheduled payments until default or early payoff."""
    pay = annuity_payment(principal, apr, T)
    r = apr / 12.0
    amounts = np.zeros(T + 1)
    amounts[0] = -principal
    last = T if default_month == 0 else default_month - 1
    if prepay_month and (default_month == 0 or prepay_month < default_month):
        # pays the schedule through prepay_month-1, then retires the balance
        amounts[1:prepay_month] = pay
        growth = (1.0 + r) ** prepay_month
        balance = principal * growth - pay * (growth - 1.0) / r
        amounts[prepay_month] = pay + max(0.0, balance)
        return amounts[: prepay_month + 1] if prepay_month >= 1 else amounts
    amounts[1 : last + 1] = pay
    return amounts


def generate_market(config: MarketConfig) -> Dataset:
    """Realize the market as a Dataset flowing through the normal pipeline."""
    truth = market_truth(config)
    T = config.term_months
    ds = Dataset()
    for i, pid in enumerate(truth.ids):
        ds.demographics[pid] = _demographic_weights(
            config, int(truth.race_idx[i]), int(truth.gender_idx[i])
        )
        approved = bool(truth.approved[i])
        funded = bool(truth.funded[i])
        ds.applications.append(
            ApplicationRecord(
                application_id=pid,
                features=truth.features[i],
                requested_amount=float(truth.requested[i]),
                approved=approved,
                funded=funded,
                fed_rate=float(truth.fed_rate[i]),
                offered_apr=float(truth.apr[i]) if approved else None,
                applicant_id=pid,
                application_month=int(truth.origination_month[i]),
            )
        )
        if not funded:
            continue
        d = int(truth.default_month[i])
        amounts = _loan_cashflow(
            float(truth.principal[i]), float(truth.apr[i]), T, d, int(truth.prepay_month[i])
        )
        defaulted = d != 0 and not (truth.prepay_month[i] and truth.prepay_month[i] < d)
        loan = LoanRecord(
            loan_id=pid,
            origination_month=int(truth.origination_month[i]),
            term_months=T,
            principal=float(truth.principal[i]),
            apr=float(truth.apr[i]),
            cashflow=CashflowVector(amounts),
            features=truth.features[i],
            defaulted=defaulted,
            default_month=d if defaulted else None,
            target_return=float(truth.target_return[i]),
        )
        loan.validate()
        ds.loans.append(loan)
    return ds.validate()


def true_risk(config: MarketConfig, applicant_id: str) -> float:
    """Exact cumulative default probability used when generating this id."""
    truth = market_truth(config)
    try:
        idx = int(applicant_id.lstrip("A"))
        if truth.ids[idx] != applicant_id:
            raise ValueError
    except (ValueError, IndexError):
        raise ValidationError(f"unknown applicant id {applicant_id!r}") from None
    return float(truth.q_true[idx])


def expected_cashflow_matrix(truth: MarketTruth):
    """Expected monthly cashflows of the funded loans under the *true*
    hazard, aligned on the calendar axis like irr.calendar_matrix."""
    config = truth.config
    T = config.term_months
    idx = np.flatnonzero(truth.funded)
    h = truth.monthly_hazard_true()[idx]
    pay = np.array(
        [annuity_payment(truth.principal[i], truth.apr[i], T) for i in idx]
    )
    t = np.arange(1, T + 1)
    expected = pay[:, None] * (1.0 - h[:, None]) ** t[None, :]
    start = int(truth.origination_month[idx].min())
    end = int(truth.origination_month[idx].max()) + T + 1
    mat = np.zeros((idx.size, end - start))
    for row, i in enumerate(idx):
        off = int(truth.origination_month[i]) - start
        mat[row, off] = -truth.principal[i]
        mat[row, off + 1 : off + T + 1] = expected[row]
    funded_ids = [truth.ids[i] for i in idx]
    return mat, funded_ids


def expected_group_irr(config: MarketConfig, scheme: GroupScheme, axis: str) -> dict[str, float]:
    """Analytic benchmark: annualized IRR of each group's weighted expected
    aggregate cashflow. With zero miscalibration this is the return implied
    by the target-return curve."""
    truth = market_truth(config)
    mat, funded_ids = expected_cashflow_matrix(truth)
    demos = {
        pid: _demographic_weights(config, int(truth.race_idx[i]), int(truth.gender_idx[i]))
        for i, pid in enumerate(truth.ids)
        if truth.funded[i]
    }
    out = {}
    for g, name in enumerate(categories(axis)):
        w = np.array([scheme.weights(demos[pid], axis)[g] for pid in funded_ids])
        if w.sum() <= 0:
            continue
        res = irr_mod.irr(w @ mat)
        out[name] = res.annualized_rate
    return out
