"""Group weighting schemes over demographic proxy probabilities.

Two modes: probability-weighted (each person contributes their proxy
probability to every group) and argmax-labeled (each person counts fully
toward their single most likely category, ties broken by fixed category
order).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .data import DemographicWeights, RACE_CATEGORIES, GENDER_CATEGORIES
from .errors import DegenerateInputError
from .stats import effective_n

AXES = ("race", "gender")


def categories(axis: str) -> tuple[str, ...]:
    if axis == "race":
        return RACE_CATEGORIES
    if axis == "gender":
        return GENDER_CATEGORIES
    raise ValueError(f"unknown axis {axis!r}")


class SchemeMode(Enum):
    PROBABILITY_WEIGHTED = "weighted"
    ARGMAX_LABELED = "argmax"


@dataclass
class GroupScheme:
    mode: SchemeMode = SchemeMode.PROBABILITY_WEIGHTED
    tie_count: int = field(default=0, compare=False)

    def weights(self, demo: DemographicWeights, axis: str) -> np.ndarray:
        """Per-group weight vector for one person along the given axis."""
        probs = demo.race_probs if axis == "race" else demo.gender_probs
        if self.mode is SchemeMode.PROBABILITY_WEIGHTED:
            return probs.copy()
        winner = int(np.argmax(probs))  # argmax takes the first maximal index
        if np.sum(probs == probs[winner]) > 1:
            self.tie_count += 1
        out = np.zeros_like(probs)
        out[winner] = 1.0
        return out


def parse_scheme(name: str) -> GroupScheme:
    return GroupScheme(mode=SchemeMode(name))


def group_weights(demo: DemographicWeights, scheme: GroupScheme, axis: str) -> dict[str, float]:
    vec = scheme.weights(demo, axis)
    return dict(zip(categories(axis), vec))


def weight_matrix(ids, demographics, scheme: GroupScheme, axis: str) -> np.ndarray:
    """(n_ids, n_groups) weight matrix in the fixed category order."""
    return np.array([scheme.weights(demographics[i], axis) for i in ids])


def weighted_group_mean(values: dict[str, float], demographics, scheme: GroupScheme,
                        axis: str, group: str):
    """Group-weighted mean of per-id values, with the effective sample size.

    Returns ``(mean, n_effective)``. Raises on zero total group weight.
    """
    gi = categories(axis).index(group)
    ids = list(values)
    v = np.array([values[i] for i in ids], dtype=float)
    w = np.array([scheme.weights(demographics[i], axis)[gi] for i in ids])
    tot = w.sum()
    if tot <= 0:
        raise DegenerateInputError(f"group {group} has zero total weight")
    return float(np.dot(v, w) / tot), effective_n(w)
