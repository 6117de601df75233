"""Regression primitives: damped-Newton logistic MLE, weighted least
squares with standard errors, and a logit-link cubic B-spline smoother fit
by iteratively reweighted least squares."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .errors import DegenerateInputError, NumericalError
from .stats import weighted_quantile


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def fit_logistic(X, y, sample_weight=None, max_iter: int = 100, tol: float = 1e-10,
                 ridge: float = 0.0):
    """Maximum-likelihood logistic regression by damped Newton iteration.

    ``X`` is the full design matrix (add an intercept column yourself).
    Returns ``(coef, cov)`` where cov is the inverse observed information.
    Raises on non-convergence or apparent perfect separation.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    n, k = X.shape
    if n <= k:
        raise DegenerateInputError("more coefficients than observations")
    beta = np.zeros(k)

    def loglik(b):
        z = X @ b
        return float(np.dot(w, y * z - np.logaddexp(0.0, z)))

    ll = loglik(beta)
    for _ in range(max_iter):
        p = sigmoid(X @ beta)
        grad = X.T @ (w * (y - p))
        if np.linalg.norm(grad) <= tol * max(1.0, np.linalg.norm(beta)):
            break
        v = w * p * (1.0 - p)
        H = X.T @ (X * v[:, None]) + ridge * np.eye(k)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            raise NumericalError("singular Hessian in logistic fit") from None
        # halve the step until the log-likelihood improves
        scale = 1.0
        for _ in range(40):
            cand = beta + scale * step
            ll_cand = loglik(cand)
            if ll_cand >= ll:
                moved = np.max(np.abs(cand - beta))
                beta, ll = cand, ll_cand
                break
            scale *= 0.5
        else:
            break
        # at the numerical optimum the gradient can plateau above tol while
        # the iterates stop moving; treat a negligible step as converged
        if moved <= 1e-12 * max(1.0, float(np.max(np.abs(beta)))):
            break
    else:
        raise NumericalError("logistic fit did not converge in 100 iterations")
    if np.max(np.abs(beta)) > 1e3:
        raise NumericalError(
            "logistic coefficients diverged; the data are likely perfectly separated"
        )
    p = sigmoid(X @ beta)
    v = w * p * (1.0 - p)
    H = X.T @ (X * v[:, None]) + ridge * np.eye(k)
    cov = np.linalg.inv(H)
    return beta, cov


def fit_wls(X, y, sample_weight=None):
    """Weighted least squares; returns (coef, cov, residuals).

    cov is the classical sigma^2 (X'WX)^-1 estimate.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    sw = np.sqrt(w)
    Xw = X * sw[:, None]
    yw = y * sw
    coef, _, rank, _ = np.linalg.lstsq(Xw, yw, rcond=None)
    if rank < k:
        raise NumericalError(f"design matrix is rank deficient (rank {rank} < {k})")
    resid = y - X @ coef
    sigma2 = float(np.dot(w, resid**2)) / max(n - k, 1)
    cov = sigma2 * np.linalg.inv(Xw.T @ Xw)
    return coef, cov, resid


@dataclass
class LogitSplineFit:
    """Smoothed probability curve p(x) = sigmoid(B(x) @ coef)."""

    knots: np.ndarray
    coef: np.ndarray
    x_lo: float
    x_hi: float

    def predict(self, grid):
        g = np.clip(np.asarray(grid, dtype=float), self.x_lo, self.x_hi)
        B = BSpline.design_matrix(g, self.knots, 3).toarray()
        return sigmoid(B @ self.coef)


def _spline_knots(x, w, n_knots: int):
    lo, hi = float(np.min(x)), float(np.max(x))
    if hi <= lo:
        raise DegenerateInputError("cannot place spline knots on a constant predictor")
    interior = weighted_quantile(x, w, np.linspace(0, 1, n_knots)[1:-1])
    interior = np.unique(np.clip(interior, lo, hi))
    interior = interior[(interior > lo) & (interior < hi)]
    return np.concatenate([[lo] * 4, interior, [hi] * 4])


def fit_logit_spline(x, y, sample_weight=None, n_knots: int = 6,
                     max_iter: int = 50, ridge: float = 1e-6) -> LogitSplineFit:
    """Observation-weighted logit-link regression of a binary outcome on a
    cubic B-spline basis of x, fit by IRLS; knots at weighted quantiles."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(x) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    keep = w > 0
    x, y, w = x[keep], y[keep], w[keep]
    knots = _spline_knots(x, w, n_knots)
    B = BSpline.design_matrix(x, knots, 3).toarray()
    k = B.shape[1]
    coef = np.zeros(k)
    for _ in range(max_iter):
        p = sigmoid(B @ coef)
        v = np.clip(w * p * (1.0 - p), 1e-10, None)
        z = B @ coef + (y - p) / np.clip(p * (1.0 - p), 1e-10, None)
        H = B.T @ (B * v[:, None]) + ridge * np.eye(k)
        new = np.linalg.solve(H, B.T @ (v * z))
        if np.max(np.abs(new - coef)) < 1e-10:
            coef = new
            break
        coef = new
    return LogitSplineFit(knots=knots, coef=coef, x_lo=float(x.min()), x_hi=float(x.max()))
