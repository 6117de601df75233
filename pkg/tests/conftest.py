"""Shared fixtures: hand-built loan records plus session-scoped synthetic
markets (generation and model fits are expensive, so they are cached)."""

from __future__ import annotations

import numpy as np
import pytest

from lendaudit.data import (
    CashflowVector,
    Dataset,
    DemographicWeights,
    LoanRecord,
)
from lendaudit.synthgen import MarketConfig, generate_market


def one_hot_demo(race_i: int = 0, gender_i: int = 0) -> DemographicWeights:
    race = np.zeros(5)
    race[race_i] = 1.0
    gender = np.zeros(2)
    gender[gender_i] = 1.0
    return DemographicWeights(race_probs=race, gender_probs=gender)


def make_loan(
    loan_id: str,
    amounts,
    origination_month: int = 2020 * 12,
    term_months: int | None = None,
    apr: float = 0.12,
    defaulted: bool = False,
    default_month: int | None = None,
    target_return: float | None = None,
    features=None,
) -> LoanRecord:
    amounts = np.asarray(amounts, dtype=float)
    return LoanRecord(
        loan_id=loan_id,
        origination_month=origination_month,
        term_months=term_months if term_months is not None else amounts.size - 1,
        principal=-amounts[0],
        apr=apr,
        cashflow=CashflowVector(amounts),
        features=np.zeros(2) if features is None else np.asarray(features, dtype=float),
        defaulted=defaulted,
        default_month=default_month,
        target_return=target_return,
    )


def dataset_of(loans, demographics, applications=None) -> Dataset:
    return Dataset(
        loans=list(loans),
        applications=list(applications or []),
        demographics=dict(demographics),
    ).validate()


@pytest.fixture(scope="session")
def null_config() -> MarketConfig:
    """Zero-miscalibration market, small enough for unit tests."""
    return MarketConfig(n_applicants=4000, seed=13).validate()


@pytest.fixture(scope="session")
def null_market(null_config):
    return generate_market(null_config)


@pytest.fixture(scope="session")
def injected_config() -> MarketConfig:
    """Market where Black borrowers' true risk exceeds the lender's
    estimate by 3pp, with mixed demographic proxies."""
    return MarketConfig(
        n_applicants=4000,
        seed=13,
        miscalibration_race=(0.0, -0.03, 0.0, 0.0, 0.0),
        demo_mixing=0.2,
    ).validate()


@pytest.fixture(scope="session")
def injected_market(injected_config):
    return generate_market(injected_config)
