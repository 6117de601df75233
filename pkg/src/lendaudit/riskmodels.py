"""Blind and aware default-risk models with cross-fitted out-of-sample
predictions, plus per-group calibration curves, default-by-APR curves, and
the scalar calibration gap.

The blind model sees only the lender's opaque feature vector; the aware
model additionally sees the 7 demographic proxy probabilities. Every
prediction for a training id comes from a fold that never saw that id.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from sklearn.ensemble import HistGradientBoostingClassifier
from sklearn.model_selection import KFold

from .data import DemographicWeights, LoanRecord
from .errors import DegenerateInputError, ValidationError
from .fitting import fit_logistic, fit_logit_spline, sigmoid
from .groups import GroupScheme, categories, weight_matrix
from .stats import effective_n, weighted_quantile, wilson_interval


class Awareness(Enum):
    BLIND = "blind"
    AWARE = "aware"


class Learner(Enum):
    GRADIENT_BOOSTED_TREES = "gbt"
    LOGISTIC_REGRESSION = "logistic"


@dataclass(frozen=True)
class RiskModelSpec:
    awareness: Awareness = Awareness.BLIND
    learner: Learner = Learner.GRADIENT_BOOSTED_TREES
    n_folds: int = 5
    seed: int = 0
    hyperparameters: tuple = ()  # (key, value) pairs; see _DEFAULT_GBT_PARAMS

    def params(self) -> dict:
        return dict(self.hyperparameters)


_DEFAULT_GBT_PARAMS = {"max_iter": 200, "max_depth": 4, "learning_rate": 0.1}


class _LogisticFold:
    """Standardized logistic regression with the fit_logistic Newton core."""

    def __init__(self):
        self.mean = self.scale = self.beta = None

    def fit(self, X, y):
        self.mean = X.mean(axis=0)
        self.scale = np.where(X.std(axis=0) > 0, X.std(axis=0), 1.0)
        Z = (X - self.mean) / self.scale
        Z = np.column_stack([np.ones(len(Z)), Z])
        self.beta, _ = fit_logistic(Z, y, ridge=1e-8)
        return self

    def predict_default_prob(self, X):
        Z = (X - self.mean) / self.scale
        Z = np.column_stack([np.ones(len(Z)), Z])
        return sigmoid(Z @ self.beta)


class _GbtFold:
    def __init__(self, params, seed):
        merged = {**_DEFAULT_GBT_PARAMS, **params}
        self.model = HistGradientBoostingClassifier(
            **merged, early_stopping=False, random_state=seed
        )

    def fit(self, X, y):
        self.model.fit(X, y)
        return self

    def predict_default_prob(self, X):
        return self.model.predict_proba(X)[:, 1]


def demographic_features(demo: DemographicWeights) -> np.ndarray:
    return np.concatenate([demo.race_probs, demo.gender_probs])


def design_matrix(features: np.ndarray, demographics_rows: np.ndarray | None,
                  awareness: Awareness) -> np.ndarray:
    """Blind: features only. Aware: features plus proxy probabilities.

    The blind branch never touches the demographic columns, so the
    blindness guarantee is structural.
    """
    if awareness is Awareness.BLIND:
        return np.asarray(features, dtype=float)
    if demographics_rows is None:
        raise ValidationError("aware model requires demographic probabilities")
    return np.column_stack([features, demographics_rows])


@dataclass
class RiskScores:
    """Cross-fitted default-probability predictions keyed by id."""

    spec: RiskModelSpec
    ids: list[str]
    probs: dict[str, float]
    fold_of: dict[str, int]
    _fold_models: list = field(repr=False, default_factory=list)

    def array_for(self, ids) -> np.ndarray:
        return np.array([self.probs[i] for i in ids])

    def predict_new(self, features: np.ndarray, demographics_rows: np.ndarray | None = None) -> np.ndarray:
        """Fold-averaged predictions for observations outside the training set."""
        X = design_matrix(features, demographics_rows, self.spec.awareness)
        preds = np.stack([m.predict_default_prob(X) for m in self._fold_models])
        return preds.mean(axis=0)


def fit_risk_model(loans: list[LoanRecord], demographics, spec: RiskModelSpec) -> RiskScores:
    """Train the risk model with k-fold cross-fitting on funded loans."""
    if spec.n_folds < 2:
        raise ValidationError("n_folds must be at least 2")
    ids = [l.loan_id for l in loans]
    feats = np.array([l.features for l in loans])
    y = np.array([float(l.defaulted) for l in loans])
    demo_rows = np.array([demographic_features(demographics[i]) for i in ids])
    X = design_matrix(feats, demo_rows if spec.awareness is Awareness.AWARE else None,
                      spec.awareness)

    probs = np.empty(len(loans))
    fold_of = np.empty(len(loans), dtype=int)
    models = []
    kf = KFold(n_splits=spec.n_folds, shuffle=True, random_state=spec.seed)
    for fold, (train, test) in enumerate(kf.split(X)):
        if len(np.unique(y[train])) < 2:
            raise DegenerateInputError(
                f"fold {fold}: constant default label in training split; try fewer folds"
            )
        if spec.learner is Learner.GRADIENT_BOOSTED_TREES:
            model = _GbtFold(spec.params(), spec.seed).fit(X[train], y[train])
        else:
            model = _LogisticFold().fit(X[train], y[train])
        probs[test] = model.predict_default_prob(X[test])
        fold_of[test] = fold
        models.append(model)
    return RiskScores(
        spec=spec,
        ids=ids,
        probs={i: float(p) for i, p in zip(ids, probs)},
        fold_of={i: int(f) for i, f in zip(ids, fold_of)},
        _fold_models=models,
    )


@dataclass
class CalibrationCurve:
    group: str
    axis: str
    points: list[dict]  # bin, pred_mean, obs_rate, ci_lo, ci_hi, weight
    smoothed_grid: np.ndarray
    smoothed_rate: np.ndarray


def _group_arrays(scores, loans, demographics, scheme, axis, group):
    gi = categories(axis).index(group)
    ids = [l.loan_id for l in loans]
    w = weight_matrix(ids, demographics, scheme, axis)[:, gi]
    p = scores.array_for(ids)
    y = np.array([float(l.defaulted) for l in loans])
    return p, y, w


def calibration_curve(scores: RiskScores, loans, demographics, scheme: GroupScheme,
                      axis: str, group: str, n_bins: int = 10,
                      min_per_bin: int = 20, n_grid: int = 50) -> CalibrationCurve:
    """Weighted equal-count calibration bins plus a logit-spline smoothed
    curve of observed default on predicted risk."""
    p, y, w = _group_arrays(scores, loans, demographics, scheme, axis, group)
    n_eff = effective_n(w)
    if n_eff < n_bins * min_per_bin:
        raise DegenerateInputError(
            f"group {group}: effective sample {n_eff:.0f} below required {n_bins * min_per_bin}"
        )
    qs = np.linspace(0, 1, n_bins + 1)[1:-1]
    edges = np.unique(weighted_quantile(p, w, qs))
    bins = np.searchsorted(edges, p, side="right")
    points = []
    for b in range(len(edges) + 1):
        mask = bins == b
        tw = w[mask].sum()
        if tw <= 0:
            continue
        obs = float(np.dot(y[mask], w[mask]) / tw)
        lo, hi = wilson_interval(obs, effective_n(w[mask]))
        points.append(
            {
                "bin": b,
                "pred_mean": float(np.dot(p[mask], w[mask]) / tw),
                "obs_rate": obs,
                "ci_lo": lo,
                "ci_hi": hi,
                "weight": float(tw),
            }
        )
    if np.ptp(p[w > 0]) > 0:
        fit = fit_logit_spline(p, y, sample_weight=w)
        grid = np.linspace(p[w > 0].min(), p[w > 0].max(), n_grid)
        smooth = fit.predict(grid)
    else:
        grid = np.array([float(p[w > 0][0])])
        smooth = np.array([float(np.dot(y, w) / w.sum())])
    return CalibrationCurve(group=group, axis=axis, points=points,
                            smoothed_grid=grid, smoothed_rate=smooth)


def default_by_apr_curve(loans, demographics, scheme: GroupScheme, axis: str,
                         group: str, n_grid: int = 50, n_boot: int = 200,
                         seed: int = 0, min_n_eff: float = 200.0):
    """Group-weighted logit-spline curve of default vs APR on the weighted
    2.5-97.5 percentile APR range, with a bootstrap 95% band.

    Returns a dict with keys grid, rate, ci_lo, ci_hi.
    """
    gi = categories(axis).index(group)
    ids = [l.loan_id for l in loans]
    w = weight_matrix(ids, demographics, scheme, axis)[:, gi]
    apr = np.array([l.apr for l in loans])
    y = np.array([float(l.defaulted) for l in loans])
    n_eff = effective_n(w)
    if n_eff < min_n_eff:
        raise DegenerateInputError(f"group {group}: effective sample {n_eff:.0f} below {min_n_eff}")
    if np.ptp(apr[w > 0]) <= 0:
        raise DegenerateInputError(f"group {group}: degenerate APR range")
    lo_q, hi_q = weighted_quantile(apr, w, [0.025, 0.975])
    grid = np.linspace(lo_q, hi_q, n_grid)
    fit = fit_logit_spline(apr, y, sample_weight=w)
    rate = fit.predict(grid)
    rng = np.random.default_rng(seed)
    n = len(loans)
    draws = np.empty((n_boot, n_grid))
    for b in range(n_boot):
        idx = rng.integers(0, n, size=n)
        try:
            bf = fit_logit_spline(apr[idx], y[idx], sample_weight=w[idx])
            draws[b] = bf.predict(grid)
        except DegenerateInputError:
            draws[b] = np.nan
    lo, hi = np.nanpercentile(draws, [2.5, 97.5], axis=0)
    return {"grid": grid, "rate": rate, "ci_lo": lo, "ci_hi": hi}


def calibration_gap(scores: RiskScores, loans, demographics, scheme: GroupScheme,
                    axis: str, group: str):
    """Signed group-weighted mean of (observed default - predicted risk);
    positive means the model underestimates the group's risk.

    Returns ``(gap, standard_error)``.
    """
    p, y, w = _group_arrays(scores, loans, demographics, scheme, axis, group)
    tot = w.sum()
    if tot <= 0:
        raise DegenerateInputError(f"group {group} has zero total weight")
    resid = y - p
    gap = float(np.dot(resid, w) / tot)
    n_eff = effective_n(w)
    var = float(np.dot(w, (resid - gap) ** 2) / tot)
    return gap, float(np.sqrt(var / n_eff))
