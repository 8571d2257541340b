"""Split conformal machinery: scores, rank-based prediction sets, informativeness levels.

The level-q prediction set collects every candidate label whose rank among the
calibration scores keeps ``(1 + #{i : V_i >= V(x, y)}) / (n + 1)`` strictly
above q.  Because the count only changes at calibration score values, each set
is a score sublevel region ``{y : V(x, y) <= v*}`` with a closed-form radius
v*, so no label-space grid search is ever needed.

The I-adjusted p-value of a unit is the smallest level at which its prediction
set becomes admissible for the active constraint.  With the constraint's
breakpoint nu(x) in hand it reduces to the tie-aware count
``(1 + #{i : V_i >= nu(x)}) / (n + 1)``, with the convention that it equals 1
when no admissible nonempty set exists at any level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    ClassSet,
    EMPTY_CLASS_SET,
    EMPTY_INTERVAL_UNION,
    InformativeConstraint,
    IntervalUnion,
    MuHatFn,
    PredictionSet,
    ProbFn,
    ScipError,
    UnsupportedScoreError,
    interval,
    half_line_above,
)


class LevelError(ScipError):
    """A conformal level outside [0, 1] was requested."""


# ---------------------------------------------------------------------------
# Nonconformity scores
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AbsoluteResidual:
    """V(x, y) = |y - mu_hat(x)| for a frozen point predictor."""

    mu_hat: MuHatFn
    kind: str = "absolute_residual"

    def eval(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.abs(np.asarray(y, dtype=float) - np.asarray(self.mu_hat(X), dtype=float))


@dataclass(frozen=True)
class OneMinusProb:
    """V(x, y) = 1 - p_hat(Y = y | x) for a frozen class-probability estimator."""

    p_hat: ProbFn
    kind: str = "one_minus_prob"

    def eval(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        probs = np.asarray(self.p_hat(X), dtype=float)
        labels = np.asarray(y)
        return 1.0 - probs[np.arange(probs.shape[0]), labels - 1]


@dataclass(frozen=True)
class ClippedScore:
    """mu_hat(x) - c0 - 2M * 1{y > c0}, with M exceeding sup |mu_hat|.

    The clip drops every label above c0 far below every label at or under it,
    which turns rank comparisons into comparisons of mu_hat among sub-threshold
    units only.
    """

    mu_hat: MuHatFn
    c0: float
    big_m: float
    kind: str = "clipped"

    def eval(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        mu = np.asarray(self.mu_hat(X), dtype=float)
        return mu - self.c0 - 2.0 * self.big_m * (np.asarray(y, dtype=float) > self.c0)


NonconformityScore = AbsoluteResidual | OneMinusProb | ClippedScore


# ---------------------------------------------------------------------------
# Label spaces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RealLine:
    """Regression label space."""


@dataclass(frozen=True)
class ClassLabels:
    """Classification label space 1..K."""

    n_classes: int


LabelSpace = RealLine | ClassLabels


# ---------------------------------------------------------------------------
# Calibration scores
# ---------------------------------------------------------------------------


class CalibrationScores:
    """Frozen calibration score sample with rank/count helpers.

    ``min_count_for_level(q)`` returns the smallest integer c such that a
    candidate with c calibration scores >= its own score passes the strict
    level-q rank test, i.e. the number of grid values (1+k)/(n+1) that are
    <= q.  A result of 0 means every candidate passes; n+1 means none does.
    """

    def __init__(self, values):
        vals = np.asarray(values, dtype=float).ravel()
        if vals.size == 0:
            raise ValueError("calibration scores must be nonempty")
        if not np.all(np.isfinite(vals)):
            raise ValueError("calibration scores must be finite")
        self._values = vals.copy()
        self._values.setflags(write=False)
        self._sorted = np.sort(vals)
        self._sorted.setflags(write=False)
        self._grid = np.arange(1, vals.size + 2, dtype=float) / (vals.size + 1)
        self._grid.setflags(write=False)

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def n(self) -> int:
        return self._values.size

    def count_geq(self, v) -> np.ndarray | int:
        """#{i : V_i >= v}, vectorized over v."""
        out = self.n - np.searchsorted(self._sorted, v, side="left")
        return out

    def count_gt(self, v) -> np.ndarray | int:
        out = self.n - np.searchsorted(self._sorted, v, side="right")
        return out

    def min_count_for_level(self, q) -> np.ndarray | int:
        return np.searchsorted(self._grid, q, side="right")

    def score_radius(self, q) -> np.ndarray | float:
        """Largest score value admitted at level q: +inf (all), -inf (none), or a score.

        The radius is the min_count-th largest calibration score; candidates
        belong to the level-q set exactly when their score is <= the radius.
        """
        q_arr = np.asarray(q, dtype=float)
        if np.any(~((q_arr >= 0.0) & (q_arr <= 1.0))):
            raise LevelError("conformal levels must lie in [0, 1]")
        counts = np.asarray(self.min_count_for_level(q_arr))
        radii = np.empty(counts.shape, dtype=float)
        all_in = counts == 0
        none_in = counts == self.n + 1
        mid = ~(all_in | none_in)
        radii[all_in] = math.inf
        radii[none_in] = -math.inf
        radii[mid] = self._sorted[self.n - counts[mid]]
        return radii if np.ndim(q) else float(radii[()])


# ---------------------------------------------------------------------------
# Prediction sets
# ---------------------------------------------------------------------------


def interval_set_from_radius(mu: float, radius: float) -> IntervalUnion:
    """Closed residual sublevel interval [mu - r, mu + r]; empty for r < 0, full line for r = inf."""
    if radius == math.inf:
        return interval(-math.inf, math.inf, lower_open=True, upper_open=True)
    if radius < 0.0:
        return EMPTY_INTERVAL_UNION
    return interval(mu - radius, mu + radius)


def class_set_from_radius(probs: np.ndarray, radius: float) -> ClassSet:
    """Classes whose probability keeps 1 - p within the score radius."""
    if radius == -math.inf:
        return EMPTY_CLASS_SET
    members = np.flatnonzero(1.0 - probs <= radius) + 1
    return ClassSet(tuple(int(k) for k in members))


def conformal_prediction_set(
    x_row: np.ndarray,
    cal: CalibrationScores,
    score: NonconformityScore,
    q: float,
    label_space: LabelSpace,
) -> PredictionSet:
    """Level-q split conformal set for one feature vector."""
    radius = cal.score_radius(q)
    X = np.atleast_2d(np.asarray(x_row, dtype=float))
    if isinstance(score, AbsoluteResidual):
        if not isinstance(label_space, RealLine):
            raise UnsupportedScoreError("absolute-residual scores need a real label space")
        mu = float(np.asarray(score.mu_hat(X), dtype=float)[0])
        return interval_set_from_radius(mu, radius)
    if isinstance(score, OneMinusProb):
        if not isinstance(label_space, ClassLabels):
            raise UnsupportedScoreError("probability scores need a class label space")
        probs = np.asarray(score.p_hat(X), dtype=float)[0]
        if probs.shape[0] != label_space.n_classes:
            raise ValueError("probability vector length disagrees with label space")
        return class_set_from_radius(probs, radius)
    if isinstance(score, ClippedScore):
        if not isinstance(label_space, RealLine):
            raise UnsupportedScoreError("clipped scores need a real label space")
        mu = float(np.asarray(score.mu_hat(X), dtype=float)[0])
        base = mu - score.c0
        if base <= radius:
            return interval(-math.inf, math.inf, lower_open=True, upper_open=True)
        if base - 2.0 * score.big_m <= radius:
            return half_line_above(score.c0)
        return EMPTY_INTERVAL_UNION
    raise UnsupportedScoreError(f"unknown score {score!r}")


# ---------------------------------------------------------------------------
# I-adjusted p-values
# ---------------------------------------------------------------------------


def i_adjusted_pvalues(
    X: np.ndarray,
    cal: CalibrationScores,
    score: NonconformityScore,
    constraint: InformativeConstraint,
) -> np.ndarray:
    """Smallest admissible conformal level per unit; 1 when none exists."""
    nu = np.asarray(constraint.breakpoints(score, np.asarray(X, dtype=float)), dtype=float)
    out = np.ones(nu.shape, dtype=float)
    ok = ~np.isnan(nu)
    if np.any(ok):
        # count_geq(+inf) = 0, so an always-admissible unit gets the floor 1/(n+1)
        out[ok] = (1.0 + cal.count_geq(nu[ok])) / (cal.n + 1)
    return out


def i_adjusted_pvalue(
    x_row: np.ndarray,
    cal: CalibrationScores,
    score: NonconformityScore,
    constraint: InformativeConstraint,
) -> float:
    return float(i_adjusted_pvalues(np.atleast_2d(np.asarray(x_row, dtype=float)), cal, score, constraint)[0])


def truncated_i_adjusted_pvalue(q_tilde, tau):
    """max(tau, q_tilde), elementwise."""
    q_arr = np.asarray(q_tilde, dtype=float)
    t_arr = np.asarray(tau, dtype=float)
    if np.any(q_arr < 0.0) or np.any(q_arr > 1.0) or np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
        raise LevelError("levels must lie in [0, 1]")
    out = np.maximum(t_arr, q_arr)
    return out if (np.ndim(q_tilde) or np.ndim(tau)) else float(out)
