"""Group weighting schemes and the weighted-mean reduction."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lendaudit.data import DemographicWeights
from lendaudit.errors import DegenerateInputError
from lendaudit.groups import (
    GroupScheme,
    SchemeMode,
    group_weights,
    parse_scheme,
    weighted_group_mean,
)

from conftest import one_hot_demo


def demo_of(race, gender=(0.5, 0.5)):
    return DemographicWeights(race_probs=np.asarray(race, float),
                              gender_probs=np.asarray(gender, float))


class TestGroupWeights:
    def test_probability_weighted_is_identity(self):
        d = demo_of([0.7, 0.1, 0.1, 0.05, 0.05])
        w = group_weights(d, GroupScheme(SchemeMode.PROBABILITY_WEIGHTED), "race")
        assert w == {"White": 0.7, "Black": 0.1, "Hispanic": 0.1, "Asian": 0.05, "Other": 0.05}

    def test_argmax_is_indicator(self):
        d = demo_of([0.7, 0.1, 0.1, 0.05, 0.05])
        w = group_weights(d, GroupScheme(SchemeMode.ARGMAX_LABELED), "race")
        assert w == {"White": 1.0, "Black": 0.0, "Hispanic": 0.0, "Asian": 0.0, "Other": 0.0}

    def test_argmax_tie_goes_to_first_category_and_counts(self):
        d = demo_of([0.5, 0.5, 0.0, 0.0, 0.0])
        scheme = GroupScheme(SchemeMode.ARGMAX_LABELED)
        w = group_weights(d, scheme, "race")
        assert w["White"] == 1.0 and w["Black"] == 0.0
        assert scheme.tie_count == 1

    def test_parse_scheme(self):
        assert parse_scheme("weighted").mode is SchemeMode.PROBABILITY_WEIGHTED
        assert parse_scheme("argmax").mode is SchemeMode.ARGMAX_LABELED
        with pytest.raises(ValueError):
            parse_scheme("mode-that-does-not-exist")


@settings(max_examples=100, deadline=None)
@given(
    raw=st.lists(st.floats(min_value=1e-3, max_value=1.0), min_size=5, max_size=5)
)
def test_argmax_is_simplex_vertex_dominated_by_probs(raw):
    probs = np.array(raw) / np.sum(raw)
    d = demo_of(probs)
    wv = GroupScheme(SchemeMode.PROBABILITY_WEIGHTED).weights(d, "race")
    av = GroupScheme(SchemeMode.ARGMAX_LABELED).weights(d, "race")
    assert set(np.unique(av)) <= {0.0, 1.0}
    assert av.sum() == 1.0
    assert wv.sum() == pytest.approx(1.0, abs=1e-9)
    # the argmax vertex puts its mass on a maximal-probability coordinate
    assert wv[np.argmax(av)] == np.max(wv)


class TestWeightedGroupMean:
    def test_equal_weights(self):
        values = {"a": 4.0, "b": 8.0}
        demos = {"a": one_hot_demo(0), "b": one_hot_demo(0)}
        m, n_eff = weighted_group_mean(values, demos, GroupScheme(), "race", "White")
        assert m == 6.0
        assert n_eff == pytest.approx(2.0)

    def test_masking(self):
        values = {"a": 4.0, "b": 8.0}
        demos = {"a": one_hot_demo(0), "b": one_hot_demo(1)}
        m, n_eff = weighted_group_mean(values, demos, GroupScheme(), "race", "White")
        assert m == 4.0
        assert n_eff == pytest.approx(1.0)

    def test_convex_combination(self):
        values = {"a": 4.0, "b": 8.0}
        demos = {
            "a": demo_of([0.25, 0.75, 0, 0, 0]),
            "b": demo_of([0.75, 0.25, 0, 0, 0]),
        }
        m, _ = weighted_group_mean(values, demos, GroupScheme(), "race", "White")
        assert m == pytest.approx(7.0)

    def test_zero_weight_group_raises(self):
        values = {"a": 4.0}
        demos = {"a": one_hot_demo(0)}
        with pytest.raises(DegenerateInputError):
            weighted_group_mean(values, demos, GroupScheme(), "race", "Black")

    def test_invariant_under_uniform_weight_rescaling(self):
        # all-0.5 proxies versus one-hot halves scale every weight uniformly
        values = {"a": 1.0, "b": 5.0, "c": 9.0}
        demos_half = {k: demo_of([0.5, 0.5, 0, 0, 0]) for k in values}
        demos_full = {k: one_hot_demo(0) for k in values}
        m_half, _ = weighted_group_mean(values, demos_half, GroupScheme(), "race", "White")
        m_full, _ = weighted_group_mean(values, demos_full, GroupScheme(), "race", "White")
        assert m_half == m_full
