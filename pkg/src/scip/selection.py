"""Trust-score ranking and selection: generalized conformal p-values and BH thresholding.

A generalized conformal p-value compares a test unit's trust score against the
trust scores of the *null* calibration units (those whose label escaped their
own informative set):

    p_j = [ #{i : null_i, T_i > T_j} + (1 + #{i : null_i, T_i = T_j}) * U_j ] / (n + 1)

with U_j in (0, 1] breaking ties.  Selection applies the step-up BH rule,
whose self-consistent form  alpha_hat = max{a : (alpha/m) #{p <= a} >= a}
produces the identical selected set.  The counting-knockoff scan over an
estimated false discovery proportion reproduces BH on deterministic (U = 1)
p-values and, with a single shared U, the homogeneous variant.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import (
    CalibrationRecord,
    PredictionSet,
    RngStream,
    TestRecord,
    is_empty_set,
)


class TieMode(enum.Enum):
    """How the uniform tie-breakers in the generalized p-values are drawn."""

    PER_UNIT = "per_unit"
    SHARED_U = "shared_u"
    DETERMINISTIC = "deterministic"


@dataclass(frozen=True)
class ScoredPool:
    """Calibration trust scores with null flags, plus test trust scores."""

    cal_trust: np.ndarray
    cal_null: np.ndarray
    test_trust: np.ndarray

    def __post_init__(self):
        cal = np.asarray(self.cal_trust, dtype=float)
        null = np.asarray(self.cal_null, dtype=bool)
        test = np.asarray(self.test_trust, dtype=float)
        if cal.shape != null.shape or cal.ndim != 1 or test.ndim != 1:
            raise ValueError("pool arrays must be aligned 1-d vectors")
        if not (np.all(np.isfinite(cal)) and np.all(np.isfinite(test))):
            raise ValueError("trust scores must be finite")
        object.__setattr__(self, "cal_trust", cal)
        object.__setattr__(self, "cal_null", null)
        object.__setattr__(self, "test_trust", test)

    @property
    def n(self) -> int:
        return self.cal_trust.size

    @property
    def m(self) -> int:
        return self.test_trust.size


@dataclass(frozen=True)
class SelectionResult:
    """Selected indices (0-based), the BH threshold, and the p-values used.

    ``trust_threshold`` is populated only by the counting-knockoff route,
    where selection is a trust-score cut rather than a p-value cut.
    """

    selected: np.ndarray
    threshold_alpha_hat: float
    pvalues: np.ndarray
    k_hat: int
    trust_threshold: float | None = None

    def selected_mask(self) -> np.ndarray:
        mask = np.zeros(self.pvalues.size, dtype=bool)
        mask[self.selected] = True
        return mask


def _tie_draws(m: int, tie_mode: TieMode, rng: RngStream | None) -> np.ndarray:
    if tie_mode is TieMode.DETERMINISTIC:
        return np.ones(m)
    if rng is None:
        raise ValueError(f"tie mode {tie_mode.value} needs an RngStream")
    if tie_mode is TieMode.SHARED_U:
        return np.full(m, float(rng.uniform_open_closed()))
    return rng.uniform_open_closed(m)


def generalized_conformal_pvalues(
    pool: ScoredPool,
    tie_mode: TieMode = TieMode.PER_UNIT,
    rng: RngStream | None = None,
) -> np.ndarray:
    """Tie-aware rank of each test trust score among null calibration trusts."""
    null_sorted = np.sort(pool.cal_trust[pool.cal_null])
    n_null = null_sorted.size
    gt = n_null - np.searchsorted(null_sorted, pool.test_trust, side="right")
    geq = n_null - np.searchsorted(null_sorted, pool.test_trust, side="left")
    u = _tie_draws(pool.m, tie_mode, rng)
    return (gt + (1.0 + (geq - gt)) * u) / (pool.n + 1)


def bh_select(pvalues, alpha: float) -> SelectionResult:
    """Step-up BH: k_hat = max{k : p_(k) <= alpha k / m}, threshold alpha k_hat / m.

    Identical selected set to the self-consistent rule
    max{a in [0,1] : (alpha/m) #{p <= a} >= a}, with max over the empty set
    read as 0.
    """
    p = np.asarray(pvalues, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("p-values must form a nonempty vector")
    if np.any(~((p >= 0.0) & (p <= 1.0))):
        raise ValueError("p-values must lie in [0, 1]")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    m = p.size
    order = np.sort(p)
    passing = np.flatnonzero(order <= alpha * np.arange(1, m + 1) / m)
    k_hat = int(passing[-1] + 1) if passing.size else 0
    alpha_hat = alpha * k_hat / m
    selected = np.flatnonzero(p <= alpha_hat) if k_hat else np.array([], dtype=int)
    return SelectionResult(selected, float(alpha_hat), p, k_hat)


def self_consistent_select(pvalues, alpha: float) -> SelectionResult:
    """Literal maximization of the self-consistent threshold over its candidate grid.

    Reference path for the equivalence suite; the achievable maxima all lie on
    {alpha k / m} so the scan is exact.
    """
    p = np.asarray(pvalues, dtype=float)
    m = p.size
    candidates = np.concatenate([[0.0], p, alpha * np.arange(1, m + 1) / m])
    candidates = candidates[(candidates >= 0.0) & (candidates <= 1.0)]
    counts = (p[None, :] <= candidates[:, None]).sum(axis=1)
    feasible = candidates[(alpha / m) * counts >= candidates]
    alpha_hat = float(feasible.max()) if feasible.size else 0.0
    selected = np.flatnonzero(p <= alpha_hat) if alpha_hat > 0.0 else np.array([], dtype=int)
    return SelectionResult(selected, alpha_hat, p, int(selected.size))


def counting_knockoff_fdp(pool: ScoredPool, tau: float, u: float = 1.0) -> float:
    """FDP estimate at trust threshold tau; u = 1 gives the deterministic form
    [1 + #{i : null_i, T_i >= tau}] / (1 v #{j : T_j >= tau}) * m / (n + 1)."""
    null_t = pool.cal_trust[pool.cal_null]
    num = np.count_nonzero(null_t > tau) + (1.0 + np.count_nonzero(null_t == tau)) * u
    den = max(1, int(np.count_nonzero(pool.test_trust >= tau)))
    return float(num / den * pool.m / (pool.n + 1))


def counting_knockoff_select(
    pool: ScoredPool,
    alpha: float,
    tie_mode: TieMode = TieMode.DETERMINISTIC,
    rng: RngStream | None = None,
) -> SelectionResult:
    """Smallest test trust threshold whose FDP estimate is <= alpha.

    Equals BH over deterministic generalized p-values (tie mode DETERMINISTIC)
    or over shared-U p-values (SHARED_U).  PER_UNIT has no coherent shared
    threshold semantics and is rejected.
    """
    if tie_mode is TieMode.PER_UNIT:
        raise ValueError("counting-knockoff selection needs a shared or deterministic tie regime")
    u = 1.0 if tie_mode is TieMode.DETERMINISTIC else float(_tie_draws(1, tie_mode, rng)[0])
    feasible = [
        tau for tau in np.unique(pool.test_trust) if counting_knockoff_fdp(pool, float(tau), u) <= alpha
    ]
    # the matching generalized p-values (same shared u), attached as diagnostics
    null_sorted = np.sort(pool.cal_trust[pool.cal_null])
    n_null = null_sorted.size
    gt = n_null - np.searchsorted(null_sorted, pool.test_trust, side="right")
    geq = n_null - np.searchsorted(null_sorted, pool.test_trust, side="left")
    pvals = (gt + (1.0 + (geq - gt)) * u) / (pool.n + 1)
    if not feasible:
        return SelectionResult(np.array([], dtype=int), 0.0, pvals, 0, trust_threshold=None)
    tau_hat = float(min(feasible))
    selected = np.flatnonzero(pool.test_trust >= tau_hat)
    k_hat = int(selected.size)
    return SelectionResult(
        selected, alpha * k_hat / pool.m, pvals, k_hat, trust_threshold=tau_hat
    )


@dataclass(frozen=True)
class ScipSelection:
    """Selection result plus the reported prediction sets for selected units."""

    result: SelectionResult
    reported: tuple[tuple[int, PredictionSet], ...]


def scip_select_arrays(
    cal_trust,
    cal_null,
    test_trust,
    alpha: float,
    tie_mode: TieMode = TieMode.PER_UNIT,
    rng: RngStream | None = None,
    test_eligible=None,
    shrink_m: bool = False,
) -> SelectionResult:
    """Generalized p-values + BH over raw arrays.

    Ineligible test units (empty informative sets) are never selected; by
    default they keep their slot in the BH denominator and are frozen out by
    assigning p = 1, while ``shrink_m`` reruns BH over eligible units only.
    """
    pool = ScoredPool(np.asarray(cal_trust), np.asarray(cal_null), np.asarray(test_trust))
    eligible = (
        np.ones(pool.m, dtype=bool) if test_eligible is None else np.asarray(test_eligible, dtype=bool)
    )
    pvals = generalized_conformal_pvalues(pool, tie_mode, rng)
    pvals = np.where(eligible, pvals, 1.0)
    if shrink_m and not eligible.all():
        idx = np.flatnonzero(eligible)
        if idx.size == 0:
            return SelectionResult(np.array([], dtype=int), 0.0, pvals, 0)
        inner = bh_select(pvals[idx], alpha)
        return SelectionResult(idx[inner.selected], inner.threshold_alpha_hat, pvals, inner.k_hat)
    return bh_select(pvals, alpha)


def scip_select(
    cal: list[CalibrationRecord],
    test: list[TestRecord],
    alpha: float,
    tie_mode: TieMode = TieMode.PER_UNIT,
    rng: RngStream | None = None,
    shrink_m: bool = False,
) -> ScipSelection:
    """End-to-end selector over per-unit records; reports the selected units' sets."""
    for rec in cal + test:
        if is_empty_set(rec.pred_set) and rec.trust != 0.0:
            raise ValueError("empty informative sets must carry trust 0")
    result = scip_select_arrays(
        np.array([r.trust for r in cal]),
        np.array([r.is_null for r in cal]),
        np.array([r.trust for r in test]),
        alpha,
        tie_mode,
        rng,
        test_eligible=np.array([not is_empty_set(r.pred_set) for r in test]),
        shrink_m=shrink_m,
    )
    reported = tuple((int(j), test[int(j)].pred_set) for j in result.selected)
    return ScipSelection(result, reported)
