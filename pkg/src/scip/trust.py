"""Trust scores: reliability scores for (feature, informative set) pairs.

All shipped trust scores map to nonnegative reals and send the empty set to 0.
The trained variants approximate the oracle score pr{Y in C(X) | X = x} by a
linear-logistic classifier fit with a class-weighted cross-entropy risk
(weight lambda on the positive class), either on a disjoint labeled training
sample or on the positive/unlabeled split of the mixed sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .conformal import NonconformityScore
from .core import (
    ClassSet,
    DegenerateLabelsError,
    IntervalUnion,
    MuHatFn,
    NotPositiveDefiniteError,
    PredictionSet,
    ProbFn,
    is_empty_set,
)


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X


# ---------------------------------------------------------------------------
# Closed-form trust scores
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MonotoneExpTrust:
    """exp(-V(x, c0)) for a nonconformity score monotone non-increasing in y.

    The caller asserts monotonicity; the score at the boundary label c0 then
    summarizes how far the unit sits from the uninteresting region.
    """

    score: NonconformityScore
    c0: float

    def scores(self, X: np.ndarray, sets=None) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        c = np.full(X.shape[0], self.c0)
        out = np.exp(-np.asarray(self.score.eval(X, c), dtype=float))
        return _zero_empty(out, sets)

    def eval(self, x_row, pset: PredictionSet) -> float:
        if is_empty_set(pset):
            return 0.0
        return float(self.scores(np.atleast_2d(np.asarray(x_row, dtype=float)))[0])


@dataclass(frozen=True)
class RegionProbabilityTrust:
    """Estimated pr{Y in C | X = x} for one-sided half-line sets (regression).

    ``region_prob(X, pset)`` must be a frozen estimator trained off the mixed
    sample.  Sets other than a single half line are rejected.
    """

    region_prob: Callable[[np.ndarray, PredictionSet], np.ndarray]

    def eval(self, x_row, pset: PredictionSet) -> float:
        if is_empty_set(pset):
            return 0.0
        _require_half_line(pset)
        out = np.asarray(
            self.region_prob(np.atleast_2d(np.asarray(x_row, dtype=float)), pset), dtype=float
        )
        return float(out[0])

    def scores(self, X: np.ndarray, sets) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.zeros(X.shape[0])
        for i, pset in enumerate(sets):
            if not is_empty_set(pset):
                out[i] = self.eval(X[i], pset)
        return out


def _require_half_line(pset: PredictionSet):
    if not isinstance(pset, IntervalUnion) or len(pset.intervals) != 1:
        raise ValueError("region trust expects a single half-line set")
    iv = pset.intervals[0]
    if not (math.isinf(iv.lower) ^ math.isinf(iv.upper)):
        raise ValueError("region trust expects a half line unbounded on exactly one side")


@dataclass(frozen=True)
class ClassProbabilityTrust:
    """Sum of estimated class probabilities over the set's members."""

    p_hat: ProbFn

    def scores(self, X: np.ndarray, sets) -> np.ndarray:
        probs = np.asarray(self.p_hat(np.asarray(X, dtype=float)), dtype=float)
        out = np.zeros(probs.shape[0])
        for i, pset in enumerate(sets):
            if is_empty_set(pset):
                continue
            if not isinstance(pset, ClassSet):
                raise ValueError("class-sum trust expects class sets")
            out[i] = probs[i, [k - 1 for k in pset.members]].sum()
        return out

    def eval(self, x_row, pset: PredictionSet) -> float:
        return float(self.scores(np.atleast_2d(np.asarray(x_row, dtype=float)), [pset])[0])


def class_membership_trust(probs: np.ndarray, member_mask: np.ndarray) -> np.ndarray:
    """Vectorized class-sum trust: probs (n, K) against a boolean member mask."""
    return np.where(member_mask.any(axis=1), (probs * member_mask).sum(axis=1), 0.0)


@dataclass(frozen=True)
class DistanceTrust:
    """|(c_l + c_u)/2 - mu_hat(x)|: distance of the prediction from the indifference midpoint."""

    mu_hat: MuHatFn
    c_l: float
    c_u: float

    def scores(self, X: np.ndarray, sets=None) -> np.ndarray:
        mu = np.asarray(self.mu_hat(np.asarray(X, dtype=float)), dtype=float)
        out = np.abs((self.c_l + self.c_u) / 2.0 - mu)
        return _zero_empty(out, sets)

    def eval(self, x_row, pset: PredictionSet) -> float:
        if pset is not None and is_empty_set(pset):
            return 0.0
        return float(self.scores(np.atleast_2d(np.asarray(x_row, dtype=float)))[0])


def _zero_empty(values: np.ndarray, sets) -> np.ndarray:
    if sets is None:
        return values
    empty = np.fromiter((is_empty_set(s) for s in sets), dtype=bool, count=len(sets))
    return np.where(empty, 0.0, values)


def one_minus_level_trust(q_plus) -> np.ndarray:
    """Trust 1 - q_plus; the level-1 (empty set) corner lands exactly on 0."""
    return 1.0 - np.asarray(q_plus, dtype=float)


def monotone_trust(score: NonconformityScore, c0: float) -> MonotoneExpTrust:
    return MonotoneExpTrust(score, c0)


def probability_trust(region_prob=None, p_hat=None):
    """Region-probability trust (regression) or class-sum trust (classification)."""
    if (region_prob is None) == (p_hat is None):
        raise ValueError("pass exactly one of region_prob / p_hat")
    return RegionProbabilityTrust(region_prob) if region_prob is not None else ClassProbabilityTrust(p_hat)


def distance_trust(mu_hat: MuHatFn, c_l: float, c_u: float) -> DistanceTrust:
    return DistanceTrust(mu_hat, c_l, c_u)


# ---------------------------------------------------------------------------
# Diversity-aware scores
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianKernel:
    """s(x, x') = exp(-||x - x'||^2 / (2 scale^2))."""

    scale: float = 1.0

    def matrix(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        sq = ((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2)
        return np.exp(-sq / (2.0 * self.scale**2))


@dataclass(frozen=True)
class IdentityKernel:
    """s(x, x') = 1{x is the same unit}; useful as a no-similarity baseline."""

    def matrix(self, X: np.ndarray) -> np.ndarray:
        return np.eye(np.asarray(X).shape[0])


def diversity_scores(pool_features, psi, kernel, alpha: float) -> np.ndarray:
    """Similarity-aware trust scores for the pooled units.

    Solves A T = (alpha u2 - u1) Psi + (u2 - alpha u3) 1 with
    A_ij = (1 - psi_i)(1 - psi_j) s(x_i, x_j) via one Cholesky factorization
    and two triangular solves; A is never inverted explicitly.
    """
    X = np.asarray(pool_features, dtype=float)
    psi = np.asarray(psi, dtype=float).ravel()
    if psi.shape[0] != X.shape[0]:
        raise ValueError("psi must align with the pooled features")
    if np.any((psi < 0.0) | (psi > 1.0)):
        raise ValueError("psi entries must lie in [0, 1]")
    w = 1.0 - psi
    A = np.outer(w, w) * np.asarray(kernel.matrix(X), dtype=float)
    try:
        factor = cho_factor(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("similarity matrix is not positive definite") from exc
    ones = np.ones(psi.shape[0])
    a_psi = cho_solve(factor, psi, check_finite=False)
    a_one = cho_solve(factor, ones, check_finite=False)
    u1 = float(psi @ a_psi)
    u2 = float(psi @ a_one)
    u3 = float(ones @ a_one)
    return (alpha * u2 - u1) * a_psi + (u2 - alpha * u3) * a_one


# ---------------------------------------------------------------------------
# Trained trust scores
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerConfig:
    """Full-batch gradient descent with backtracking step halving."""

    max_iter: int = 5000
    grad_tol: float = 1e-8
    init_step: float = 1.0
    shrink: float = 0.5


def _gd_minimize(value_and_grad, w0: np.ndarray, config: OptimizerConfig):
    """Descend until the gradient sup-norm passes tol or the budget runs out.

    Step sizes warm-start from the previously accepted step (doubled), then
    halve until the loss decreases; the loss trace is non-increasing by
    construction.
    """
    w = w0.astype(float).copy()
    loss, grad = value_and_grad(w)
    trace = [float(loss)]
    step = config.init_step
    converged = False
    for _ in range(config.max_iter):
        if np.max(np.abs(grad)) < config.grad_tol:
            converged = True
            break
        step = min(step * 2.0, 1e3)
        while step > 1e-18:
            cand = w - step * grad
            cand_loss, cand_grad = value_and_grad(cand)
            if cand_loss < loss:
                break
            step *= config.shrink
        else:
            break  # no descent direction at float resolution
        w, loss, grad = cand, cand_loss, cand_grad
        trace.append(float(loss))
    return w, np.asarray(trace), converged


def polynomial_features(X: np.ndarray, degree: int) -> np.ndarray:
    """Coordinatewise powers 1..degree of the raw features (no intercept column)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return np.hstack([X**p for p in range(1, degree + 1)])


@dataclass(frozen=True)
class TrainedScorer:
    """Linear-logistic trust score g(x) = sigmoid(w . phi(x) + b) in (0, 1)."""

    weights: np.ndarray
    bias: float
    lam: float
    feature_degree: int
    loss_trace: np.ndarray
    converged: bool
    pu_learned: bool = False
    metadata: dict = field(default_factory=dict)

    def predict(self, X: np.ndarray) -> np.ndarray:
        phi = polynomial_features(X, self.feature_degree)
        z = phi @ self.weights + self.bias
        # keep the output inside the open interval even when the link saturates
        return np.clip(_sigmoid(z), 1e-300, np.nextafter(1.0, 0.0))

    def scores(self, X: np.ndarray, sets=None) -> np.ndarray:
        return _zero_empty(self.predict(X), sets)

    def eval(self, x_row, pset: PredictionSet) -> float:
        if pset is not None and is_empty_set(pset):
            return 0.0
        return float(self.predict(np.atleast_2d(np.asarray(x_row, dtype=float)))[0])

    def to_text(self) -> str:
        lines = [
            f"kind {'pu-logistic' if self.pu_learned else 'logistic'}",
            f"feature_map poly {self.feature_degree}",
            f"lambda {float(self.lam)!r}",
            f"bias {float(self.bias)!r}",
        ]
        lines += [f"weight {i} {float(w)!r}" for i, w in enumerate(self.weights)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainedScorer":
        kind, degree, lam, bias = None, None, None, None
        weights = {}
        for line in text.strip().splitlines():
            parts = line.split()
            if parts[0] == "kind":
                kind = parts[1]
            elif parts[0] == "feature_map":
                degree = int(parts[2])
            elif parts[0] == "lambda":
                lam = float(parts[1])
            elif parts[0] == "bias":
                bias = float(parts[1])
            elif parts[0] == "weight":
                weights[int(parts[1])] = float(parts[2])
        w = np.array([weights[i] for i in range(len(weights))])
        return cls(
            weights=w,
            bias=bias,
            lam=lam,
            feature_degree=degree,
            loss_trace=np.array([]),
            converged=True,
            pu_learned=kind == "pu-logistic",
        )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _weighted_logistic_objective(phi: np.ndarray, labels: np.ndarray, lam: float):
    """Mean of lambda-weighted cross-entropy terms; labels are +-1."""
    n = phi.shape[0]
    a = (labels > 0).astype(float)
    w = np.where(labels > 0, lam, 1.0)

    def value_and_grad(theta):
        z = phi @ theta[:-1] + theta[-1]
        # log(1 + exp(-z)) for positives, log(1 + exp(z)) for negatives
        losses = np.where(labels > 0, np.logaddexp(0.0, -z), np.logaddexp(0.0, z))
        val = float((w * losses).sum() / n)
        resid = w * (_sigmoid(z) - a) / n
        grad = np.concatenate([phi.T @ resid, [resid.sum()]])
        return val, grad

    return value_and_grad


def train_trust_classifier(
    X: np.ndarray,
    labels: np.ndarray,
    lam: float = 1.0,
    config: OptimizerConfig = OptimizerConfig(),
    feature_degree: int = 1,
) -> TrainedScorer:
    """Fit the lambda-weighted cross-entropy risk over the linear-logistic class.

    ``labels`` are +-1 (+1 marks units whose label lies in their informative
    set, or the one-/two-sided relabelings used by the enhanced procedures).
    """
    labels = np.asarray(labels)
    if lam <= 0.0:
        raise ValueError("lambda must be positive")
    if np.all(labels > 0) or np.all(labels < 0):
        raise DegenerateLabelsError("training labels are all one class")
    phi = polynomial_features(X, feature_degree)
    value_and_grad = _weighted_logistic_objective(phi, labels, lam)
    theta0 = np.zeros(phi.shape[1] + 1)
    theta, trace, converged = _gd_minimize(value_and_grad, theta0, config)
    return TrainedScorer(
        weights=theta[:-1],
        bias=float(theta[-1]),
        lam=lam,
        feature_degree=feature_degree,
        loss_trace=trace,
        converged=converged,
    )


def train_pu_classifier(
    cal_X: np.ndarray,
    cal_positive: np.ndarray,
    test_X: np.ndarray,
    lam: float = 1.0,
    config: OptimizerConfig = OptimizerConfig(),
    feature_degree: int = 1,
) -> TrainedScorer:
    """Positive/unlabeled risk over the mixed sample.

    Calibration units whose label lies in their informative set are the
    positives; every other mixed unit (calibration misses and all unlabeled
    test units) is treated as negative.  The result is not permutation
    invariant over the mixed sample; its validity for selection needs the
    null indicators to be independent Bernoulli draws, which is recorded in
    the metadata.
    """
    cal_positive = np.asarray(cal_positive, dtype=bool)
    if not cal_positive.any():
        raise DegenerateLabelsError("PU training needs at least one covered calibration unit")
    cal_X = _as_matrix(cal_X)
    test_X = _as_matrix(test_X)
    X = np.vstack([cal_X, test_X])
    labels = np.concatenate([np.where(cal_positive, 1, -1), -np.ones(test_X.shape[0], dtype=int)])
    phi = polynomial_features(X, feature_degree)
    value_and_grad = _weighted_logistic_objective(phi, labels, lam)
    theta, trace, converged = _gd_minimize(value_and_grad, np.zeros(phi.shape[1] + 1), config)
    return TrainedScorer(
        weights=theta[:-1],
        bias=float(theta[-1]),
        lam=lam,
        feature_degree=feature_degree,
        loss_trace=trace,
        converged=converged,
        pu_learned=True,
        metadata={"validity": "requires independent Bernoulli null indicators"},
    )


# ---------------------------------------------------------------------------
# Softmax classifier (class-probability estimation for the simulations)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SoftmaxScorer:
    """Multinomial-logistic class probabilities over polynomial features."""

    weights: np.ndarray  # (n_features + 1, K), last row is the intercept
    feature_degree: int
    loss_trace: np.ndarray
    converged: bool

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        phi = polynomial_features(X, self.feature_degree)
        z = phi @ self.weights[:-1] + self.weights[-1]
        z -= z.max(axis=1, keepdims=True)
        ez = np.exp(z)
        return ez / ez.sum(axis=1, keepdims=True)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.predict_proba(X)


def train_softmax_classifier(
    X: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    config: OptimizerConfig = OptimizerConfig(),
    feature_degree: int = 1,
) -> SoftmaxScorer:
    """Fit softmax cross-entropy by the same descent scheme; labels are 1..K."""
    y = np.asarray(y)
    if np.unique(y).size < 2:
        raise DegenerateLabelsError("softmax training needs at least two classes present")
    phi = polynomial_features(X, feature_degree)
    n, p = phi.shape
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y - 1] = 1.0

    def value_and_grad(theta):
        W = theta.reshape(p + 1, n_classes)
        z = phi @ W[:-1] + W[-1]
        zmax = z.max(axis=1, keepdims=True)
        log_norm = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
        val = float((log_norm - z[np.arange(n), y - 1]).sum() / n)
        probs = np.exp(z - log_norm[:, None])
        resid = (probs - onehot) / n
        grad = np.vstack([phi.T @ resid, resid.sum(axis=0)])
        return val, grad.ravel()

    theta, trace, converged = _gd_minimize(value_and_grad, np.zeros((p + 1) * n_classes), config)
    return SoftmaxScorer(theta.reshape(p + 1, n_classes), feature_degree, trace, converged)
