"""Small weighted-statistics helpers used throughout the metrics modules."""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInputError


def effective_n(weights) -> float:
    """Kish effective sample size, (sum w)^2 / sum w^2."""
    w = np.asarray(weights, dtype=float)
    tot = w.sum()
    if tot <= 0:
        return 0.0
    return float(tot * tot / np.sum(w * w))


def weighted_mean(values, weights) -> float:
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    tot = w.sum()
    if tot <= 0:
        raise DegenerateInputError("total weight is zero")
    return float(np.dot(v, w) / tot)


def weighted_std(values, weights) -> float:
    """Weighted population standard deviation."""
    m = weighted_mean(values, weights)
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    return float(np.sqrt(np.dot(w, (v - m) ** 2) / w.sum()))


def weighted_quantile(values, weights, q):
    """Type-7 style interpolation on the weighted ECDF.

    ``q`` may be a scalar or array of probabilities in [0, 1].
    """
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    keep = w > 0
    v, w = v[keep], w[keep]
    if v.size == 0:
        raise DegenerateInputError("no observations with positive weight")
    order = np.argsort(v, kind="stable")
    v, w = v[order], w[order]
    cw = np.cumsum(w)
    # plotting positions: midpoint-free, (cw - w) / (total - last-step) maps the
    # first point to 0 and the last to 1, matching numpy's linear (type-7) rule
    # in the equal-weight case.
    denom = cw[-1] - w[-1]
    if denom <= 0:
        return np.full_like(np.asarray(q, dtype=float), v[0]) if np.ndim(q) else float(v[0])
    pos = (cw - w) / denom
    out = np.interp(q, pos, v)
    return out if np.ndim(q) else float(out)


def weighted_corr(x, y, weights) -> float:
    """Weighted Pearson correlation; nan when either variance is zero."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(weights, dtype=float)
    mx = weighted_mean(x, w)
    my = weighted_mean(y, w)
    cov = np.dot(w, (x - mx) * (y - my))
    vx = np.dot(w, (x - mx) ** 2)
    vy = np.dot(w, (y - my) ** 2)
    if vx <= 0 or vy <= 0:
        return float("nan")
    return float(cov / np.sqrt(vx * vy))


def wilson_interval(p_hat: float, n_eff: float, z: float = 1.959963984540054):
    """Wilson score interval for a proportion at effective sample size n_eff."""
    if n_eff <= 0:
        return (float("nan"), float("nan"))
    denom = 1.0 + z * z / n_eff
    center = (p_hat + z * z / (2 * n_eff)) / denom
    half = z * np.sqrt(p_hat * (1 - p_hat) / n_eff + z * z / (4 * n_eff * n_eff)) / denom
    return (float(max(0.0, center - half)), float(min(1.0, center + half)))
