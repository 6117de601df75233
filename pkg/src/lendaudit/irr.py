"""Net present value and internal rate of return over monthly cashflows.

The solver finds the monthly rate ``m`` with NPV(m) = 0 by damped Newton
iteration, falling back to bisection on an expanding bracket, and
annualizes by monthly compounding: annual = (1+m)^12 - 1.

Conventions:

* a cashflow with no positive receipt after disbursement is a total loss:
  status ImmediateDefault, annualized rate exactly -1;
* if no sign change is found after expanding the bracket to m = 10, the
  result is NoSignChange and callers decide the exclusion policy.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DegenerateInputError, NumericalError
from .data import CashflowVector, LoanRecord

ABS_TOL = 1e-10  # |NPV| tolerance, relative to |amounts[0]|
MAX_NEWTON_ITER = 100
MAX_BISECT_ITER = 200
RATE_FLOOR = -1.0 + 1e-9
RATE_CEIL = 10.0


class IrrStatus(Enum):
    CONVERGED = "Converged"
    IMMEDIATE_DEFAULT = "ImmediateDefault"
    NO_SIGN_CHANGE = "NoSignChange"


@dataclass(frozen=True)
class IrrResult:
    annualized_rate: float
    monthly_rate: float
    status: IrrStatus
    iterations: int


def annualize(monthly_rate: float) -> float:
    return (1.0 + monthly_rate) ** 12 - 1.0


def _amounts(cashflow) -> np.ndarray:
    if isinstance(cashflow, CashflowVector):
        return cashflow.amounts
    return np.asarray(cashflow, dtype=float)


def npv(cashflow, monthly_rate: float) -> float:
    """Sum of amounts[t] / (1+m)^t; requires m > -1."""
    if monthly_rate <= -1.0:
        raise NumericalError(f"monthly rate {monthly_rate} must exceed -1")
    c = _amounts(cashflow)
    t = np.arange(c.size)
    return float(np.sum(c * (1.0 + monthly_rate) ** (-t)))


def _npv_and_grad(c: np.ndarray, t: np.ndarray, m: float):
    disc = (1.0 + m) ** (-t)
    f = np.dot(c, disc)
    grad = np.dot(c, -t * disc / (1.0 + m))
    return f, grad


def _opposite_signs(a: float, b: float) -> bool:
    # sign test instead of a*b <= 0, which can overflow near the rate floor
    return a == 0.0 or b == 0.0 or (a > 0.0) != (b > 0.0)


def _expand_bracket(c, t):
    """Bracket [lo, hi] with NPV(lo) > 0 > NPV(hi), or None."""
    lo = RATE_FLOOR
    with np.errstate(over="ignore", invalid="ignore"):
        flo = np.dot(c, (1.0 + lo) ** (-t))
    if not np.isfinite(flo):
        # near m = -1 the latest nonzero entry dominates; only the sign matters
        last_nonzero = np.nonzero(c)[0][-1]
        flo = np.copysign(1e300, c[last_nonzero])
    hi = 0.5
    while True:
        fhi = np.dot(c, (1.0 + hi) ** (-t))
        if _opposite_signs(flo, fhi):
            return lo, hi, flo, fhi
        if hi >= RATE_CEIL:
            return None
        hi = min(2.0 * hi, RATE_CEIL)


def _bisect(c, t, lo, hi, flo, fhi, tol):
    it = 0
    for it in range(1, MAX_BISECT_ITER + 1):
        mid = 0.5 * (lo + hi)
        fm = np.dot(c, (1.0 + mid) ** (-t))
        if abs(fm) <= tol:
            return mid, it
        if _opposite_signs(flo, fm):
            hi, fhi = mid, fm
        else:
            lo, flo = mid, fm
        if hi - lo < 1e-15:
            break
    return 0.5 * (lo + hi), it


def irr(cashflow, newton_start: float = 0.01) -> IrrResult:
    """Monthly-rate IRR of a single cashflow, annualized by compounding."""
    c = _amounts(cashflow)
    if c.size < 2 or not np.all(np.isfinite(c)):
        raise DegenerateInputError("cashflow must have >= 2 finite entries")
    if np.max(c[1:], initial=-np.inf) <= 0.0:
        return IrrResult(-1.0, -1.0, IrrStatus.IMMEDIATE_DEFAULT, 0)

    t = np.arange(c.size, dtype=float)
    scale = abs(c[0]) if c[0] != 0 else float(np.max(np.abs(c)))
    tol = ABS_TOL * scale

    m = newton_start
    for it in range(1, MAX_NEWTON_ITER + 1):
        f, grad = _npv_and_grad(c, t, m)
        if abs(f) <= tol:
            if m > RATE_CEIL:  # roots beyond the ceiling are reported NoSignChange
                break
            return IrrResult(annualize(m), m, IrrStatus.CONVERGED, it)
        if grad == 0.0 or not np.isfinite(grad):
            break
        step = f / grad
        m_next = m - step
        # keep the iterate inside the admissible rate domain
        if m_next <= RATE_FLOOR or m_next > RATE_CEIL * 10:
            break
        m = m_next

    bracket = _expand_bracket(c, t)
    if bracket is None:
        return IrrResult(float("nan"), float("nan"), IrrStatus.NO_SIGN_CHANGE, 0)
    m, it = _bisect(c, t, *bracket, tol)
    return IrrResult(annualize(m), m, IrrStatus.CONVERGED, it)


def irr_bisection(cashflow) -> IrrResult:
    """Pure-bisection solver; the independent oracle for the Newton path."""
    c = _amounts(cashflow)
    if np.max(c[1:], initial=-np.inf) <= 0.0:
        return IrrResult(-1.0, -1.0, IrrStatus.IMMEDIATE_DEFAULT, 0)
    t = np.arange(c.size, dtype=float)
    bracket = _expand_bracket(c, t)
    if bracket is None:
        return IrrResult(float("nan"), float("nan"), IrrStatus.NO_SIGN_CHANGE, 0)
    m, it = _bisect(c, t, *bracket, 0.0)
    return IrrResult(annualize(m), m, IrrStatus.CONVERGED, it)


def calendar_matrix(loans: list[LoanRecord]):
    """Stack loan cashflows on a shared calendar-month axis.

    Returns ``(matrix, start_month)`` where row i holds loan i's amounts
    placed at its origination offset; columns are consecutive calendar
    months starting at ``start_month``.
    """
    if not loans:
        raise DegenerateInputError("no loans to align")
    start = min(l.origination_month for l in loans)
    end = max(l.origination_month + len(l.cashflow) for l in loans)
    mat = np.zeros((len(loans), end - start))
    for i, loan in enumerate(loans):
        off = loan.origination_month - start
        mat[i, off : off + len(loan.cashflow)] = loan.cashflow.amounts
    return mat, start


def aggregate_cashflows(loans: list[LoanRecord], weights) -> np.ndarray:
    """Weighted sum of loan cashflows aligned on the calendar axis.

    ``weights`` maps loan_id -> non-negative weight, or is an array aligned
    with ``loans``. The aggregate has no sign constraints beyond finiteness.
    """
    if not loans:
        raise DegenerateInputError("no loans to aggregate")
    if isinstance(weights, dict):
        w = np.array([weights[l.loan_id] for l in loans], dtype=float)
    else:
        w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise DegenerateInputError("negative aggregation weight")
    if w.sum() == 0:
        raise DegenerateInputError("all aggregation weights are zero")
    mat, _ = calendar_matrix(loans)
    return w @ mat
