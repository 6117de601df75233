"""Group audit statistics and the bootstrap machinery."""

import numpy as np
import pytest

from lendaudit.amortize import annuity_payment, scheduled_balances
from lendaudit.errors import DegenerateInputError, NumericalError, ValidationError
from lendaudit.groups import GroupScheme, SchemeMode
from lendaudit.metrics import (
    bootstrap_ci,
    cumulative_loss_rate,
    default_rate_by_group,
    irr_volatility_by_group,
    loan_loss_fractions,
    mean_individual_irr_by_group,
    portfolio_irr_by_group,
    principal_lost_by_group,
    target_return_by_group,
    target_return_default_curve,
)

from conftest import make_loan, one_hot_demo

NB = 200  # enough for stable CIs in unit tests, cheap to run


def amortized_loan(lid, principal=1000.0, apr=0.12, term=12, paid_months=None,
                   race_i=0, target_return=None):
    """Loan paying the level schedule through `paid_months` (None = full),
    then defaulting."""
    pay = annuity_payment(principal, apr, term)
    if paid_months is None:
        amounts = np.concatenate([[-principal], np.full(term, pay)])
        defaulted, dm = False, None
    else:
        amounts = np.concatenate([[-principal], np.full(paid_months, pay),
                                  np.zeros(term - paid_months)])
        defaulted, dm = True, paid_months + 1
    return make_loan(lid, amounts, apr=apr, term_months=term,
                     defaulted=defaulted, default_month=dm, target_return=target_return)


class TestBootstrapCi:
    def test_zero_variance(self):
        v = np.ones(4)
        ci68, ci95 = bootstrap_ci(lambda idx: v[idx].mean(), 4, NB, seed=0)
        assert ci68 == (1.0, 1.0)
        assert ci95 == (1.0, 1.0)

    def test_deterministic_given_seed(self):
        v = np.random.default_rng(0).normal(size=50)
        a = bootstrap_ci(lambda idx: v[idx].mean(), 50, NB, seed=42)
        b = bootstrap_ci(lambda idx: v[idx].mean(), 50, NB, seed=42)
        assert a == b

    def test_normal_theory_width(self):
        v = np.random.default_rng(7).normal(size=10_000)
        _, ci95 = bootstrap_ci(lambda idx: v[idx].mean(), v.size, 1000, seed=1)
        width = ci95[1] - ci95[0]
        expected = 2 * 1.96 / np.sqrt(10_000)
        assert abs(width - expected) <= 0.2 * expected

    def test_min_resamples_enforced(self):
        with pytest.raises(ValueError):
            bootstrap_ci(lambda idx: 0.0, 10, 99, seed=0)

    def test_failure_threshold(self):
        def bad(idx):
            raise RuntimeError("always fails")

        with pytest.raises(NumericalError):
            bootstrap_ci(bad, 10, NB, seed=0)


class TestPortfolioIrr:
    def test_single_loan_reduces_to_irr(self):
        amounts = [-100.0] + [0.0] * 11 + [110.0]
        loans = [make_loan("L1", amounts)]
        demos = {"L1": one_hot_demo(0)}
        (m,) = portfolio_irr_by_group(loans, demos, GroupScheme(), "race", n_boot=NB, seed=0)
        assert m.group == "White"
        assert m.point == pytest.approx(0.10, abs=1e-9)
        assert m.ci68 == (m.point, m.point)

    def test_symmetric_groups_identical(self):
        amounts = [-100.0] + [0.0] * 11 + [110.0]
        loans = [make_loan("L1", amounts), make_loan("L2", amounts)]
        demos = {"L1": one_hot_demo(0), "L2": one_hot_demo(1)}
        res = portfolio_irr_by_group(loans, demos, GroupScheme(), "race", n_boot=NB, seed=0)
        by_group = {m.group: m for m in res}
        assert set(by_group) == {"White", "Black"}
        assert by_group["White"].point == by_group["Black"].point

    def test_ci_nesting_and_point_coverage(self, null_market):
        loans = null_market.loans[:800]
        res = portfolio_irr_by_group(loans, null_market.demographics, GroupScheme(),
                                     "gender", n_boot=NB, seed=3)
        for m in res:
            assert m.ci95[0] <= m.ci68[0] <= m.ci68[1] <= m.ci95[1]
            assert m.ci95[0] <= m.point <= m.ci95[1]

    def test_order_invariance(self, null_market):
        loans = null_market.loans[:300]
        demos = null_market.demographics
        a = portfolio_irr_by_group(loans, demos, GroupScheme(), "gender", n_boot=NB, seed=5)
        b = portfolio_irr_by_group(loans[::-1], demos, GroupScheme(), "gender", n_boot=NB, seed=5)
        for ma, mb in zip(a, b):
            assert ma.point == pytest.approx(mb.point, abs=1e-12)


class TestMeanIndividualIrr:
    def test_average_including_total_loss(self):
        good = [-100.0] + [0.0] * 11 + [110.0]  # IRR 0.10
        loss = [-100.0, 0.0, 0.0]  # ImmediateDefault, -1.0
        loans = [make_loan("L1", good), make_loan("L2", loss, defaulted=True, default_month=1)]
        demos = {"L1": one_hot_demo(0), "L2": one_hot_demo(0)}
        (m,) = mean_individual_irr_by_group(loans, demos, GroupScheme(), "race",
                                            n_boot=NB, seed=0)
        assert m.point == pytest.approx(-0.45, abs=1e-9)

    def test_identical_loans_mean_equals_individual(self):
        amounts = [-100.0] + [60.0, 60.0]
        loans = [make_loan(f"L{i}", amounts) for i in range(5)]
        demos = {l.loan_id: one_hot_demo(0) for l in loans}
        (m,) = mean_individual_irr_by_group(loans, demos, GroupScheme(), "race",
                                            n_boot=NB, seed=0)
        from lendaudit.irr import irr

        assert m.point == pytest.approx(irr(amounts).annualized_rate, abs=1e-12)

    def test_swapping_race_probs_of_identical_loans_is_noop(self):
        amounts = [-100.0, 60.0, 60.0]
        loans = [make_loan("L1", amounts), make_loan("L2", amounts)]
        d1, d2 = one_hot_demo(0), one_hot_demo(1)
        a = mean_individual_irr_by_group(loans, {"L1": d1, "L2": d2}, GroupScheme(),
                                         "race", n_boot=NB, seed=9)
        b = mean_individual_irr_by_group(loans, {"L1": d2, "L2": d1}, GroupScheme(),
                                         "race", n_boot=NB, seed=9)
        assert {m.group: m.point for m in a} == {m.group: m.point for m in b}


class TestPrincipalLost:
    def test_immediate_default_loses_everything(self):
        loan = make_loan("L1", [-1000.0, 0.0, 0.0], defaulted=True, default_month=1)
        np.testing.assert_allclose(loan_loss_fractions([loan]), [1.0])
        (m,) = principal_lost_by_group([loan], {"L1": one_hot_demo(0)}, GroupScheme(),
                                       "race", n_boot=NB, seed=0)
        assert m.point == 1.0

    def test_fully_repaid_loses_nothing(self):
        loan = amortized_loan("L1")
        assert loan_loss_fractions([loan])[0] == pytest.approx(0.0, abs=1e-9)

    def test_half_schedule_matches_amortization_oracle(self):
        principal, apr, term, k = 1000.0, 0.12, 12, 6
        loan = amortized_loan("L1", principal, apr, term, paid_months=k)
        expected = scheduled_balances(principal, apr, term)[k] / principal
        assert loan_loss_fractions([loan])[0] == pytest.approx(expected, rel=1e-9)
        (m,) = principal_lost_by_group([loan], {"L1": one_hot_demo(0)}, GroupScheme(),
                                       "race", n_boot=NB, seed=0)
        assert m.point == pytest.approx(expected, rel=1e-9)

    def test_bounded_in_unit_interval(self, null_market):
        res = principal_lost_by_group(null_market.loans[:500], null_market.demographics,
                                      GroupScheme(), "race", n_boot=NB, seed=0)
        for m in res:
            assert 0.0 <= m.ci95[0] <= m.point <= m.ci95[1] <= 1.0

    def test_defaulted_without_month_rejected(self):
        loan = make_loan("L1", [-100.0, 10.0, 0.0])
        loan.defaulted = True
        with pytest.raises(ValidationError):
            loan_loss_fractions([loan])


class TestCumulativeLossRate:
    def test_point_mass(self):
        f = np.zeros(3)
        f[1] = 1.0
        assert cumulative_loss_rate(100.0, f, [80.0, 50.0, 20.0], np.zeros(3)) == 0.5

    def test_no_default_is_zero(self):
        assert cumulative_loss_rate(100.0, np.zeros(4), np.full(4, 50.0), np.zeros(4)) == 0.0

    def test_pmf_must_be_subprobability(self):
        with pytest.raises(NumericalError):
            cumulative_loss_rate(100.0, [0.8, 0.8], [50.0, 50.0], [0.0, 0.0])

    def test_monte_carlo_cross_check(self):
        principal, apr, term = 100.0, 0.12, 24
        bal = scheduled_balances(principal, apr, term)
        f = np.zeros(term + 1)
        f[6], f[18] = 0.1, 0.2
        exact = cumulative_loss_rate(principal, f, bal, np.zeros(term + 1))
        rng = np.random.default_rng(123)
        draws = rng.choice([0, 6, 18], size=1_000_000, p=[0.7, 0.1, 0.2])
        losses = np.where(draws > 0, bal[draws], 0.0)
        mc = losses.mean() / principal
        se = losses.std() / principal / 1000.0
        assert abs(mc - exact) <= 3.0 * se


class TestSimpleGroupMeans:
    def test_default_rate_half(self):
        loans = [
            make_loan("L1", [-100.0, 0.0, 0.0], defaulted=True, default_month=1),
            amortized_loan("L2"),
        ]
        demos = {"L1": one_hot_demo(0), "L2": one_hot_demo(0)}
        (m,) = default_rate_by_group(loans, demos, GroupScheme(), "race", n_boot=NB, seed=0)
        assert m.point == 0.5

    def test_volatility_zero_for_identical_irrs(self):
        amounts = [-100.0, 60.0, 60.0]
        loans = [make_loan(f"L{i}", amounts) for i in range(4)]
        demos = {l.loan_id: one_hot_demo(0) for l in loans}
        (m,) = irr_volatility_by_group(loans, demos, GroupScheme(), "race", n_boot=NB, seed=0)
        assert m.point == pytest.approx(0.0, abs=1e-12)

    def test_target_return_requires_column(self):
        loans = [make_loan("L1", [-100.0, 60.0, 60.0])]
        with pytest.raises(ValidationError):
            target_return_by_group(loans, {"L1": one_hot_demo(0)}, GroupScheme(),
                                   "race", n_boot=NB, seed=0)

    def test_target_return_mean(self):
        loans = [
            make_loan("L1", [-100.0, 60.0, 60.0], target_return=0.08),
            make_loan("L2", [-100.0, 60.0, 60.0], target_return=0.12),
        ]
        demos = {"L1": one_hot_demo(0), "L2": one_hot_demo(0)}
        (m,) = target_return_by_group(loans, demos, GroupScheme(), "race", n_boot=NB, seed=0)
        assert m.point == pytest.approx(0.10)

    def test_doubled_risk_group_ordering(self, injected_market):
        # Black borrowers carry extra true risk by construction
        res = default_rate_by_group(injected_market.loans, injected_market.demographics,
                                    GroupScheme(), "race", n_boot=NB, seed=0)
        by_group = {m.group: m.point for m in res}
        assert by_group["Black"] > by_group["White"]
        vol = irr_volatility_by_group(injected_market.loans, injected_market.demographics,
                                      GroupScheme(), "race", n_boot=NB, seed=0)
        vols = {m.group: m.point for m in vol}
        assert vols["Black"] > vols["White"]


class TestDecileCurve:
    def _loans(self, n=200, seed=0):
        rng = np.random.default_rng(seed)
        tr = rng.uniform(0.05, 0.30, size=n)
        loans, demos = [], {}
        for i, t in enumerate(tr):
            defaulted = bool(t > np.median(tr))
            loans.append(
                make_loan(f"L{i}", [-100.0, 60.0, 60.0] if not defaulted else [-100.0, 60.0, 0.0],
                          defaulted=defaulted, default_month=2 if defaulted else None,
                          target_return=float(t))
            )
            demos[f"L{i}"] = one_hot_demo(0)
        return loans, demos

    def test_constant_target_return_degenerates(self):
        loans = [make_loan(f"L{i}", [-100.0, 60.0, 60.0], target_return=0.1) for i in range(30)]
        demos = {l.loan_id: one_hot_demo(0) for l in loans}
        points, corr = target_return_default_curve(loans, demos, GroupScheme(), "race", "White")
        assert len(points) == 1
        assert np.isnan(corr)

    def test_monotone_construction_positive_correlation(self):
        loans, demos = self._loans()
        points, corr = target_return_default_curve(loans, demos, GroupScheme(), "race", "White")
        assert corr > 0.5
        rates = [p["default_rate"] for p in points]
        assert rates[0] < rates[-1]

    def test_decile_means_recompose_group_mean(self):
        loans, demos = self._loans(seed=4)
        points, _ = target_return_default_curve(loans, demos, GroupScheme(), "race", "White")
        w = np.array([p["weight"] for p in points])
        tr = np.array([p["target_return"] for p in points])
        overall = np.dot(w, tr) / w.sum()
        expected = np.mean([l.target_return for l in loans])
        assert overall == pytest.approx(expected, abs=1e-9)

    def test_too_few_observations_rejected(self):
        loans = [make_loan(f"L{i}", [-100.0, 60.0, 60.0], target_return=0.1 + i / 100)
                 for i in range(5)]
        demos = {l.loan_id: one_hot_demo(0) for l in loans}
        with pytest.raises(DegenerateInputError):
            target_return_default_curve(loans, demos, GroupScheme(), "race", "White")


class TestArgmaxScheme:
    def test_argmax_equals_weighted_for_one_hot_demos(self, null_market):
        loans = null_market.loans[:300]
        demos = null_market.demographics  # one-hot by construction (demo_mixing 0)
        a = default_rate_by_group(loans, demos, GroupScheme(SchemeMode.PROBABILITY_WEIGHTED),
                                  "race", n_boot=NB, seed=2)
        b = default_rate_by_group(loans, demos, GroupScheme(SchemeMode.ARGMAX_LABELED),
                                  "race", n_boot=NB, seed=2)
        assert {m.group: m.point for m in a} == {m.group: m.point for m in b}
