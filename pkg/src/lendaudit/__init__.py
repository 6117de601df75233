"""Profit-based fair-lending audit toolkit.

Computes group internal rates of return from loan cashflows weighted by
demographic proxy probabilities, diagnoses risk-model miscalibration, and
runs approval/APR/no-shopping counterfactuals, with a built-in synthetic
lending-market generator for end-to-end verification.
"""

__version__ = "0.1.0"
