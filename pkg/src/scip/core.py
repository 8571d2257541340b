"""Shared domain types: prediction sets, informativeness constraints, datasets, RNG streams.

Prediction sets are either finite class subsets (classification) or finite
unions of real intervals (regression).  Informativeness constraints are
monotone set predicates: whenever a set is admissible, every subset of it is
admissible too, and the empty set is always admissible.  Each constraint also
knows its "informativeness breakpoint" for a given nonconformity score: the
largest score radius nu such that the sublevel set {y : V(x, y) <= nu} is
still admissible (sets strictly inside the radius are admissible, sets at or
beyond it are not).
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable

import numpy as np


class ScipError(Exception):
    """Base class for all package errors."""


class TaskMismatchError(ScipError):
    """A label of the wrong task type was tested against a prediction set."""


class ConstraintViolationError(ScipError):
    """A set that must satisfy the active constraint does not."""


class UnsupportedScoreError(ScipError):
    """No closed-form breakpoint exists for this constraint/score pairing."""


class DegenerateLabelsError(ScipError):
    """Classifier training received a single-class label vector."""


class NotPositiveDefiniteError(ScipError):
    """A matrix required to be positive definite failed factorization."""


class MissingLevelError(ScipError):
    """A per-unit conformal level was requested for an unknown unit."""


class UndefinedMetricError(ScipError):
    """A ratio metric was requested with a zero denominator."""


class ConfigError(ScipError):
    """An experiment configuration is invalid."""


# ---------------------------------------------------------------------------
# Prediction sets
# ---------------------------------------------------------------------------


def _is_int_label(y) -> bool:
    return isinstance(y, (int, np.integer)) and not isinstance(y, (bool, np.bool_))


def _is_real_label(y) -> bool:
    return isinstance(y, (float, np.floating))


@dataclass(frozen=True)
class ClassSet:
    """A finite subset of class indices 1..K; ``members`` is sorted and unique."""

    members: tuple[int, ...]

    def __post_init__(self):
        for k in self.members:
            if not _is_int_label(k) or k < 1:
                raise ValueError(f"class indices must be integers >= 1, got {k!r}")
        if any(a >= b for a, b in zip(self.members, self.members[1:])):
            raise ValueError("class members must be strictly increasing")
        object.__setattr__(self, "members", tuple(int(k) for k in self.members))

    @property
    def is_empty(self) -> bool:
        return not self.members

    def contains(self, y) -> bool:
        if not _is_int_label(y):
            raise TaskMismatchError(f"class set membership needs an integer label, got {y!r}")
        return int(y) in self.members

    def measure(self) -> float:
        return float(len(self.members))


@dataclass(frozen=True)
class Interval:
    """One real interval with explicit open/closed endpoints; infinite ends are open."""

    lower: float
    upper: float
    lower_open: bool = False
    upper_open: bool = False

    def __post_init__(self):
        lo, up = float(self.lower), float(self.upper)
        if math.isnan(lo) or math.isnan(up):
            raise ValueError("interval endpoints must not be NaN")
        if math.isinf(lo) and not self.lower_open:
            raise ValueError("an infinite lower endpoint must be open")
        if math.isinf(up) and not self.upper_open:
            raise ValueError("an infinite upper endpoint must be open")
        if lo > up or (lo == up and (self.lower_open or self.upper_open)):
            raise ValueError(f"empty interval ({lo}, {up})")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)

    def contains(self, y: float) -> bool:
        if self.lower_open:
            if y <= self.lower:
                return False
        elif y < self.lower:
            return False
        if self.upper_open:
            if y >= self.upper:
                return False
        elif y > self.upper:
            return False
        return True

    def length(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True)
class IntervalUnion:
    """A finite union of disjoint, sorted, non-mergeable intervals (possibly empty)."""

    intervals: tuple[Interval, ...] = ()

    def __post_init__(self):
        for a, b in zip(self.intervals, self.intervals[1:]):
            if a.upper > b.lower:
                raise ValueError("intervals must be disjoint and sorted by lower endpoint")
            if a.upper == b.lower and not (a.upper_open and b.lower_open):
                raise ValueError("adjacent intervals sharing a covered endpoint must be merged")

    @property
    def is_empty(self) -> bool:
        return not self.intervals

    def contains(self, y) -> bool:
        if _is_int_label(y) or not _is_real_label(y):
            raise TaskMismatchError(
                f"interval membership needs a real (float) label, got {y!r}"
            )
        return any(iv.contains(float(y)) for iv in self.intervals)

    def measure(self) -> float:
        return float(sum(iv.length() for iv in self.intervals))


PredictionSet = ClassSet | IntervalUnion

EMPTY_CLASS_SET = ClassSet(())
EMPTY_INTERVAL_UNION = IntervalUnion(())


def interval(lower, upper, lower_open=False, upper_open=False) -> IntervalUnion:
    """Convenience constructor for a single-interval prediction set."""
    return IntervalUnion((Interval(lower, upper, lower_open, upper_open),))


def half_line_above(c: float) -> IntervalUnion:
    return interval(c, math.inf, lower_open=True, upper_open=True)


def half_line_below(c: float) -> IntervalUnion:
    return interval(-math.inf, c, lower_open=True, upper_open=True)


def set_contains(pset: PredictionSet, y) -> bool:
    """Membership test respecting open/closed endpoints and label task type."""
    return pset.contains(y)


def set_measure(pset: PredictionSet) -> float:
    """Cardinality for class sets, total Lebesgue length for interval unions."""
    return pset.measure()


def is_empty_set(pset: PredictionSet) -> bool:
    return pset.is_empty


# ---------------------------------------------------------------------------
# Informativeness constraints
# ---------------------------------------------------------------------------


class InformativeConstraint(ABC):
    """Monotone predicate over prediction sets plus a score breakpoint.

    ``contains`` must be monotone (admissibility is inherited by subsets) and
    the empty set is always admissible.  ``breakpoint`` returns the largest
    score radius whose sublevel set is still admissible, ``math.inf`` when no
    radius ever violates the constraint, or ``None`` when no admissible
    nonempty sublevel set exists at all.  ``breakpoints`` is the vectorized
    form with NaN standing in for None.
    """

    @abstractmethod
    def contains(self, pset: PredictionSet) -> bool:
        ...

    @abstractmethod
    def breakpoints(self, score, X: np.ndarray) -> np.ndarray:
        ...

    def breakpoint(self, x_row: np.ndarray, score) -> float | None:
        out = self.breakpoints(score, np.atleast_2d(np.asarray(x_row, dtype=float)))
        v = float(out[0])
        return None if math.isnan(v) else v


def _interval_lowers(pset: PredictionSet) -> list[tuple[float, bool]]:
    if not isinstance(pset, IntervalUnion):
        raise TaskMismatchError("interval constraint applied to a class set")
    return [(iv.lower, iv.lower_open) for iv in pset.intervals]


def _require_residual_score(score, constraint_name: str):
    mu_hat = getattr(score, "mu_hat", None)
    if mu_hat is None or getattr(score, "kind", "") != "absolute_residual":
        raise UnsupportedScoreError(
            f"{constraint_name} has a closed-form breakpoint only for absolute-residual scores"
        )
    return mu_hat


def _require_class_prob_score(score, constraint_name: str):
    p_hat = getattr(score, "p_hat", None)
    if p_hat is None or getattr(score, "kind", "") != "one_minus_prob":
        raise UnsupportedScoreError(
            f"{constraint_name} has a closed-form breakpoint only for one-minus-probability scores"
        )
    return p_hat


@dataclass(frozen=True)
class PositiveInterval(InformativeConstraint):
    """Interval unions whose every interval has strictly positive lower endpoint."""

    def contains(self, pset):
        return all(lo > 0.0 for lo, _ in _interval_lowers(pset))

    def breakpoints(self, score, X):
        mu = np.asarray(_require_residual_score(score, "PositiveInterval")(X), dtype=float)
        return np.where(mu > 0.0, mu, np.nan)


@dataclass(frozen=True)
class LowerBoundedInterval(InformativeConstraint):
    """Interval unions lying within [c, inf)."""

    c: float

    def contains(self, pset):
        return all(lo >= self.c for lo, _ in _interval_lowers(pset))

    def breakpoints(self, score, X):
        mu = np.asarray(_require_residual_score(score, "LowerBoundedInterval")(X), dtype=float)
        v = mu - self.c
        return np.where(v > 0.0, v, np.nan)


@dataclass(frozen=True)
class HalfLine(InformativeConstraint):
    """Subsets of the open half line (c0, inf)."""

    c0: float

    def contains(self, pset):
        return all(
            lo > self.c0 or (lo == self.c0 and lo_open)
            for lo, lo_open in _interval_lowers(pset)
        )

    def breakpoints(self, score, X):
        mu = np.asarray(_require_residual_score(score, "HalfLine")(X), dtype=float)
        v = mu - self.c0
        return np.where(v > 0.0, v, np.nan)


@dataclass(frozen=True)
class TargetHalfLines(InformativeConstraint):
    """Subsets of either (-inf, c_l) or (c_u, inf)."""

    c_l: float
    c_u: float

    def __post_init__(self):
        if self.c_l > self.c_u:
            raise ValueError("need c_l <= c_u")

    def contains(self, pset):
        if not isinstance(pset, IntervalUnion):
            raise TaskMismatchError("interval constraint applied to a class set")
        if pset.is_empty:
            return True
        below = all(
            iv.upper < self.c_l or (iv.upper == self.c_l and iv.upper_open)
            for iv in pset.intervals
        )
        above = all(
            iv.lower > self.c_u or (iv.lower == self.c_u and iv.lower_open)
            for iv in pset.intervals
        )
        return below or above

    def breakpoints(self, score, X):
        mu = np.asarray(_require_residual_score(score, "TargetHalfLines")(X), dtype=float)
        v = np.maximum(self.c_l - mu, mu - self.c_u)
        return np.where(v > 0.0, v, np.nan)


@dataclass(frozen=True)
class MaxSize(InformativeConstraint):
    """Class sets with at most k0 members."""

    k0: int

    def __post_init__(self):
        if self.k0 < 1:
            raise ValueError("k0 must be >= 1")

    def contains(self, pset):
        if not isinstance(pset, ClassSet):
            raise TaskMismatchError("class-size constraint applied to an interval union")
        return len(pset.members) <= self.k0

    def breakpoints(self, score, X):
        probs = np.asarray(_require_class_prob_score(score, "MaxSize")(X), dtype=float)
        n, n_classes = probs.shape
        if n_classes <= self.k0:
            return np.full(n, math.inf)
        # 1 minus the (k0+1)-th largest class probability per row
        kth = np.partition(probs, n_classes - self.k0 - 1, axis=1)[:, n_classes - self.k0 - 1]
        return 1.0 - kth


@dataclass(frozen=True)
class SingletonClass(InformativeConstraint):
    """Class sets contained in {y0}."""

    y0: int

    def contains(self, pset):
        if not isinstance(pset, ClassSet):
            raise TaskMismatchError("singleton constraint applied to an interval union")
        return all(k == self.y0 for k in pset.members)

    def breakpoints(self, score, X):
        probs = np.asarray(_require_class_prob_score(score, "SingletonClass")(X), dtype=float)
        if probs.shape[1] < 2:
            return np.full(probs.shape[0], math.inf)
        top = np.argmax(probs, axis=1)  # smallest index wins ties
        second = np.partition(probs, probs.shape[1] - 2, axis=1)[:, probs.shape[1] - 2]
        return np.where(top == self.y0 - 1, 1.0 - second, np.nan)


# ---------------------------------------------------------------------------
# Datasets and per-unit records
# ---------------------------------------------------------------------------

REGRESSION = "regression"
CLASSIFICATION = "classification"


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus optional labels; all rows share d and task type."""

    X: np.ndarray
    y: np.ndarray | None
    task: str

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise ValueError("features must form an (n, d) matrix")
        object.__setattr__(self, "X", _freeze(X))
        if self.task not in (REGRESSION, CLASSIFICATION):
            raise ValueError(f"unknown task {self.task!r}")
        if self.y is not None:
            if self.task == REGRESSION:
                y = np.asarray(self.y, dtype=float)
            else:
                y = np.asarray(self.y)
                if not np.issubdtype(y.dtype, np.integer):
                    raise TaskMismatchError("classification labels must be integers")
                if y.size and y.min() < 1:
                    raise ValueError("class labels are 1-based")
            if y.shape != (X.shape[0],):
                raise ValueError("labels must align with feature rows")
            object.__setattr__(self, "y", _freeze(y))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def sample(self, i: int):
        return self.X[i], (None if self.y is None else self.y[i])

    def to_csv(self, path) -> None:
        """Write x columns then y (blank when unlabeled), UTF-8, LF endings."""
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join([f"x{j + 1}" for j in range(self.d)] + ["y"]) + "\n")
            for i in range(self.n):
                row = [repr(float(v)) for v in self.X[i]]
                if self.y is None:
                    row.append("")
                elif self.task == REGRESSION:
                    row.append(repr(float(self.y[i])))
                else:
                    row.append(str(int(self.y[i])))
                fh.write(",".join(row) + "\n")


@dataclass(frozen=True)
class CalibrationRecord:
    """A labeled unit with its attached informative set and trust score."""

    x: np.ndarray
    y: float | int
    pred_set: PredictionSet
    trust: float

    @property
    def is_null(self) -> bool:
        """True when the label falls outside the attached set."""
        if self.pred_set.is_empty:
            return True
        return not set_contains(self.pred_set, self.y)


@dataclass(frozen=True)
class TestRecord:
    """An unlabeled unit with its attached informative set and trust score."""

    __test__ = False  # not a pytest collection target

    x: np.ndarray
    pred_set: PredictionSet
    trust: float


# ---------------------------------------------------------------------------
# RNG streams
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RngStream:
    """A reproducible, platform-stable random stream keyed by (seed, stream path).

    Distinct stream paths under one seed are statistically independent by the
    SeedSequence spawn-key construction, so replications and stages can be
    scheduled in any order without changing results.
    """

    seed: int
    stream: tuple[int, ...] = ()

    def child(self, *ids: int) -> "RngStream":
        return RngStream(self.seed, self.stream + tuple(int(i) for i in ids))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.stream)
        return np.random.Generator(np.random.PCG64(ss))

    def uniform_open_closed(self, size=None):
        """Tie-breaking draws in (0, 1]; matches the deterministic U = 1 corner."""
        return 1.0 - self.generator().random(size)


MuHatFn = Callable[[np.ndarray], np.ndarray]
ProbFn = Callable[[np.ndarray], np.ndarray]
