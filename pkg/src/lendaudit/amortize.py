"""Level-payment amortization math shared by the metrics and the market
generator: scheduled payments, balance paths, and a payment-by-payment
ledger that attributes actual receipts to interest and principal."""

from __future__ import annotations

import numpy as np
from scipy.optimize import brentq

from .errors import NumericalError


def monthly_rate(apr: float) -> float:
    return apr / 12.0


def annuity_payment(principal: float, apr: float, term_months: int) -> float:
    """Level monthly payment P*r / (1 - (1+r)^-n)."""
    r = monthly_rate(apr)
    if r == 0:
        return principal / term_months
    return principal * r / (1.0 - (1.0 + r) ** (-term_months))


def apr_from_payment(principal: float, payment: float, term_months: int) -> float:
    """Invert the annuity formula for the APR; bisection on (0, 10)."""
    if payment * term_months <= principal:
        raise NumericalError("payment too small to amortize the principal")

    def f(apr):
        return annuity_payment(principal, apr, term_months) - payment

    return brentq(f, 1e-12, 10.0, xtol=1e-14)


def scheduled_balances(principal: float, apr: float, term_months: int) -> np.ndarray:
    """Remaining balance after t scheduled payments, t = 0..term_months.

    Entry 0 is the full principal; the final entry is ~0.
    """
    r = monthly_rate(apr)
    t = np.arange(term_months + 1)
    if r == 0:
        return principal * (1.0 - t / term_months)
    pay = annuity_payment(principal, apr, term_months)
    growth = (1.0 + r) ** t
    return principal * growth - pay * (growth - 1.0) / r


def outstanding_after_receipts(principal: float, apr: float, receipts) -> float:
    """Walk actual monthly receipts through the amortization ledger and
    return the unpaid principal balance.

    Each month accrues interest at apr/12 on the running balance; the
    month's receipt covers interest first, the rest retires principal.
    Overpayment beyond the balance is ignored (balance floors at 0).

    Interest accrued after the final payment does not inflate the result:
    the reported figure is principal minus the principal portions of the
    payments actually received.
    """
    r = monthly_rate(apr)
    balance = principal
    unpaid = principal
    for amount in np.asarray(receipts, dtype=float):
        interest = balance * r
        balance = max(0.0, balance + interest - amount)
        if amount > 0:
            unpaid = balance
        if balance == 0.0:
            break
    return unpaid
