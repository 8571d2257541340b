"""Informative set constructors: maps from features to admissible prediction sets.

Every constructor is a deterministic function of the feature vector and frozen
training artifacts, so repeated calls agree bit-exactly and the map is
permutation-invariant over any pooled sample it is applied to.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .conformal import (
    CalibrationScores,
    NonconformityScore,
    LabelSpace,
    conformal_prediction_set,
)
from .core import (
    ClassSet,
    ConstraintViolationError,
    InformativeConstraint,
    MissingLevelError,
    MuHatFn,
    PredictionSet,
    ProbFn,
    half_line_above,
    half_line_below,
)


@dataclass(frozen=True)
class FixedConstructor:
    """Returns one pre-specified admissible set for every feature vector."""

    pset: PredictionSet
    constraint: InformativeConstraint

    def __post_init__(self):
        if not self.constraint.contains(self.pset):
            raise ConstraintViolationError("fixed set violates the active constraint")

    def build(self, x_row) -> PredictionSet:
        return self.pset


@dataclass(frozen=True)
class DirectionalTwoSided:
    """Picks (c_u, inf) or (-inf, c_l) from the sign of the estimated deviation.

    The upper half line is chosen whenever (c_l + c_u)/2 - mu_hat(x) <= 0,
    so an exact midpoint tie goes up.
    """

    mu_hat: MuHatFn
    c_l: float
    c_u: float

    def __post_init__(self):
        if self.c_l > self.c_u:
            raise ValueError("need c_l <= c_u")

    def directions(self, X: np.ndarray) -> np.ndarray:
        """+1 for the upper half line, -1 for the lower."""
        mu = np.asarray(self.mu_hat(np.asarray(X, dtype=float)), dtype=float)
        return np.where((self.c_l + self.c_u) / 2.0 - mu <= 0.0, 1, -1)

    def build(self, x_row) -> PredictionSet:
        d = int(self.directions(np.atleast_2d(np.asarray(x_row, dtype=float)))[0])
        return half_line_above(self.c_u) if d == 1 else half_line_below(self.c_l)


@dataclass(frozen=True)
class ArgmaxClass:
    """Singleton of the highest-probability class; ties go to the smallest index."""

    p_hat: ProbFn

    def argmax_classes(self, X: np.ndarray) -> np.ndarray:
        probs = np.asarray(self.p_hat(np.asarray(X, dtype=float)), dtype=float)
        if not np.all(np.isfinite(probs)):
            raise ValueError("class probabilities must be finite")
        return np.argmax(probs, axis=1) + 1

    def build(self, x_row) -> PredictionSet:
        k = int(self.argmax_classes(np.atleast_2d(np.asarray(x_row, dtype=float)))[0])
        return ClassSet((k,))


@dataclass(frozen=True)
class CpTruncated:
    """Per-unit conformal sets at precomputed truncated levels.

    ``levels`` maps unit index -> truncated level; a level of 1 yields the
    empty set.  Features for the known units are stored so ``build`` can be
    called by index alone.
    """

    cal0: CalibrationScores
    score: NonconformityScore
    constraint: InformativeConstraint
    levels: Mapping[int, float]
    features: np.ndarray
    label_space: LabelSpace

    def build(self, unit: int) -> PredictionSet:
        if unit not in self.levels:
            raise MissingLevelError(f"no truncated level stored for unit {unit}")
        return conformal_prediction_set(
            self.features[unit], self.cal0, self.score, self.levels[unit], self.label_space
        )


def fixed_constructor(pset: PredictionSet, constraint: InformativeConstraint) -> FixedConstructor:
    return FixedConstructor(pset, constraint)


def directional_constructor(mu_hat: MuHatFn, c_l: float, c_u: float) -> DirectionalTwoSided:
    return DirectionalTwoSided(mu_hat, c_l, c_u)


def argmax_class_constructor(p_hat: ProbFn) -> ArgmaxClass:
    return ArgmaxClass(p_hat)


def cp_truncated_constructor(
    cal0: CalibrationScores,
    score: NonconformityScore,
    constraint: InformativeConstraint,
    q_plus_per_unit: Mapping[int, float],
    features: np.ndarray,
    label_space: LabelSpace,
) -> CpTruncated:
    return CpTruncated(cal0, score, constraint, dict(q_plus_per_unit), np.asarray(features, dtype=float), label_space)
