"""Replication runners for the simulation studies and the equivalence suite.

Each replication is a pure function of (cell parameters, replication stream),
so scheduling and parallelism cannot change results.  Method randomness is
drawn from per-method child streams keyed by a fixed registry, which keeps a
method's output invariant to which other methods run alongside it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .conformal import AbsoluteResidual, OneMinusProb
from .core import (
    CLASSIFICATION,
    ClassSet,
    ConfigError,
    Dataset,
    HalfLine,
    LowerBoundedInterval,
    MaxSize,
    PositiveInterval,
    REGRESSION,
    RngStream,
    SingletonClass,
)
from .metrics import ReplicationMetrics, replication_metrics
from .procedures import (
    ProcedureConfig,
    run_cfbh,
    run_cfbh_plus,
    run_cfbh_plus_plus,
    run_infoscop,
    run_infosp,
    run_infosp_modified,
    run_infosp_plus,
    run_infosp_plus_plus,
    run_naive,
    run_selective_classification,
)
from .references import fasi_select, zhao_su_select
from .selection import (
    ScoredPool,
    TieMode,
    bh_select,
    counting_knockoff_select,
    generalized_conformal_pvalues,
    self_consistent_select,
)
from .simgen import (
    NOISE_SD,
    gen_classification,
    gen_regression,
    gen_synthetic_scores,
)
from .trust import OptimizerConfig

METHOD_IDS = {
    "naive": 0,
    "cfbh": 1,
    "cfbh+": 2,
    "cfbh++": 3,
    "infosp": 4,
    "infosp+": 5,
    "infosp++": 6,
    "infoscop": 7,
}

REGRESSION_METHODS = ("naive", "cfbh", "cfbh+", "cfbh++", "infosp", "infosp+", "infosp++", "infoscop")
CLASSIFICATION_METHODS = ("naive", "infosp", "infosp+", "infosp++")

_DATA_STREAM = 0
_METHOD_STREAM = 1

# Monte-Carlo trainer settings: lighter than the library defaults, see notes.
MC_OPTIMIZER = OptimizerConfig(max_iter=400, grad_tol=1e-6)


def _split_halves(data: Dataset, ratio: float) -> tuple[Dataset, Dataset]:
    cut = int(round(data.n * ratio))
    if cut < 1 or cut >= data.n:
        raise ConfigError("split ratio leaves an empty calibration half")
    first = Dataset(data.X[:cut], None if data.y is None else data.y[:cut], data.task)
    second = Dataset(data.X[cut:], None if data.y is None else data.y[cut:], data.task)
    return first, second


def _slice(data_X, data_y, sl, task) -> Dataset:
    return Dataset(data_X[sl], None if data_y is None else data_y[sl], task)


def regression_replication(
    methods,
    n: int,
    m: int,
    eta: float,
    alpha: float,
    rng: RngStream,
    noise_sd: float = NOISE_SD,
    split_ratio: float = 0.5,
    screening_alpha: float | None = None,
    screening_threshold: float = 0.0,
    lam: float = 1.0,
    feature_degree: int = 2,
    optimizer: OptimizerConfig = MC_OPTIMIZER,
) -> dict[str, ReplicationMetrics]:
    """One replication of the positive-interval regression study."""
    data, mu_hat = gen_regression(2 * n + m, eta, rng.child(_DATA_STREAM), noise_sd=noise_sd)
    cal = _slice(data.X, data.y, slice(0, n), REGRESSION)
    test = _slice(data.X, data.y, slice(n, n + m), REGRESSION)
    train = _slice(data.X, data.y, slice(n + m, 2 * n + m), REGRESSION)
    score = AbsoluteResidual(mu_hat)
    base = ProcedureConfig(
        alpha=alpha,
        score=score,
        constraint=PositiveInterval(),
        split_ratio=split_ratio,
        screening_alpha=alpha / 2 if screening_alpha is None else screening_alpha,
        screening_threshold=screening_threshold,
        lam=lam,
        feature_degree=feature_degree,
        optimizer=optimizer,
    )
    one_sided = replace(base, constraint=HalfLine(screening_threshold))
    cal0, cal1 = _split_halves(cal, split_ratio)
    out: dict[str, ReplicationMetrics] = {}
    for name in methods:
        mrng = rng.child(_METHOD_STREAM, METHOD_IDS[name])
        if name == "naive":
            res = run_naive(cal, test, base)
        elif name == "cfbh":
            res = run_cfbh(cal, test, one_sided, mrng)
        elif name == "cfbh+":
            res = run_cfbh_plus(cal, test, one_sided, mrng)
        elif name == "cfbh++":
            res = run_cfbh_plus_plus(train, cal, test, one_sided, mrng)
        elif name == "infosp":
            res = run_infosp(cal, test, base)
        elif name == "infosp+":
            res = run_infosp_plus(cal1, cal0, test, base, mrng)
        elif name == "infosp++":
            res = run_infosp_plus_plus(train, cal1, cal0, test, base, mrng)
        elif name == "infoscop":
            res = run_infoscop(cal0, cal1, test, base, mrng)
        else:
            raise ConfigError(f"method {name!r} is not part of the regression study")
        out[name] = replication_metrics(res.reported, test.y)
    return out


def classification_replication(
    methods,
    n: int,
    m: int,
    alpha: float,
    rng: RngStream,
    max_size: int = 2,
    train_size: int | None = None,
    split_ratio: float = 0.5,
    optimizer: OptimizerConfig = MC_OPTIMIZER,
) -> dict[str, ReplicationMetrics]:
    """One replication of the bounded-size classification study."""
    data, p_hat = gen_classification(
        n + m, rng.child(_DATA_STREAM), train_size=n if train_size is None else train_size,
        optimizer=optimizer,
    )
    cal = _slice(data.X, data.y, slice(0, n), CLASSIFICATION)
    test = _slice(data.X, data.y, slice(n, n + m), CLASSIFICATION)
    base = ProcedureConfig(
        alpha=alpha,
        score=OneMinusProb(p_hat),
        constraint=MaxSize(max_size),
        split_ratio=split_ratio,
    )
    cal0, cal1 = _split_halves(cal, split_ratio)
    out: dict[str, ReplicationMetrics] = {}
    for name in methods:
        mrng = rng.child(_METHOD_STREAM, METHOD_IDS[name])
        if name == "naive":
            res = run_naive(cal, test, base)
        elif name == "infosp":
            res = run_infosp(cal, test, base)
        elif name == "infosp+":
            res = run_infosp_plus(cal1, cal0, test, base, mrng)
        elif name == "infosp++":
            res = run_infosp_plus_plus(None, cal1, cal0, test, base, mrng)
        else:
            raise ConfigError(f"method {name!r} is not part of the classification study")
        out[name] = replication_metrics(res.reported, test.y)
    return out


def synthetic_replication(
    methods,
    profile: str,
    n: int,
    m: int,
    alpha: float,
    rng: RngStream,
    feasible_frac: float = 0.5,
    sharpness: float = 1.5,
    max_size: int = 2,
    split_ratio: float = 0.5,
    screening_alpha: float | None = None,
) -> dict[str, ReplicationMetrics]:
    """One replication of a score-only stand-in study."""
    bundle = gen_synthetic_scores(
        profile, n + m, rng.child(_DATA_STREAM), feasible_frac=feasible_frac, sharpness=sharpness
    )
    data = bundle.data
    cal = _slice(data.X, data.y, slice(0, n), data.task)
    test = _slice(data.X, data.y, slice(n, n + m), data.task)
    if profile == "dti-like":
        base = ProcedureConfig(
            alpha=alpha,
            score=AbsoluteResidual(bundle.predictor),
            constraint=LowerBoundedInterval(bundle.threshold),
            split_ratio=split_ratio,
            screening_alpha=alpha / 2 if screening_alpha is None else screening_alpha,
            screening_threshold=bundle.threshold,
        )
    else:
        # singleton reporting: the constraint must exclude at least two of the
        # three classes for the common-level route to leave any slack
        base = ProcedureConfig(
            alpha=alpha,
            score=OneMinusProb(bundle.predictor),
            constraint=MaxSize(min(max_size, bundle.n_classes - 2)),
            split_ratio=split_ratio,
        )
    cal0, cal1 = _split_halves(cal, split_ratio)
    out: dict[str, ReplicationMetrics] = {}
    for name in methods:
        mrng = rng.child(_METHOD_STREAM, METHOD_IDS[name])
        if name == "naive":
            res = run_naive(cal, test, base)
        elif name == "infosp":
            res = run_infosp(cal, test, base)
        elif name == "infosp+":
            res = run_infosp_plus(cal1, cal0, test, base, mrng)
        elif name == "infoscop" and profile == "dti-like":
            res = run_infoscop(cal0, cal1, test, base, mrng)
        else:
            raise ConfigError(f"method {name!r} is not part of the {profile} study")
        out[name] = replication_metrics(res.reported, test.y)
    return out


def containment_replication(
    n: int,
    m: int,
    n_cal0: int,
    eta: float,
    alpha: float,
    rng: RngStream,
    noise_sd: float = NOISE_SD,
) -> bool:
    """Whether the plain-route report is nested in the truncated-route report.

    Both methods run in their modified forms: the plain route cut at the
    shared truncation threshold, the truncated route with one shared tie
    variable.  Containment is on reported (index, set) pairs; the shared
    constructor makes the per-unit sets coincide, so index containment is the
    binding part.
    """
    data, mu_hat = gen_regression(n_cal0 + n + m, eta, rng.child(_DATA_STREAM), noise_sd=noise_sd)
    cal0 = _slice(data.X, data.y, slice(0, n_cal0), REGRESSION)
    cal = _slice(data.X, data.y, slice(n_cal0, n_cal0 + n), REGRESSION)
    test = _slice(data.X, data.y, slice(n_cal0 + n, n_cal0 + n + m), REGRESSION)
    config = ProcedureConfig(
        alpha=alpha,
        score=AbsoluteResidual(mu_hat),
        constraint=PositiveInterval(),
        tie_mode=TieMode.SHARED_U,
    )
    plain = run_infosp_modified(cal, cal0, test, config)
    truncated = run_infosp_plus(cal, cal0, test, config, rng.child(_METHOD_STREAM))
    plain_sets = dict(plain.reported)
    trunc_sets = dict(truncated.reported)
    return all(j in trunc_sets and trunc_sets[j] == pset for j, pset in plain_sets.items())


# ---------------------------------------------------------------------------
# Equivalence suite
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EquivalenceReport:
    name: str
    instances: int
    failures: tuple[dict, ...]

    @property
    def passed(self) -> bool:
        return not self.failures


@dataclass(frozen=True)
class _PolyPredictor:
    """Random frozen quadratic; optional rounding forces trust-score ties."""

    a: float
    b: float
    c: float
    decimals: int | None = None

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        x = X[:, 0] if X.ndim == 2 else X
        out = self.a * x**2 + self.b * x + self.c
        return np.round(out, self.decimals) if self.decimals is not None else out


def _random_pvalues(gen: np.random.Generator) -> np.ndarray:
    m = int(gen.integers(1, 40))
    style = gen.integers(0, 3)
    if style == 0:
        return gen.random(m)
    if style == 1:  # heavy ties on a coarse grid
        return gen.integers(0, 6, m) / 5.0
    return np.minimum(1.0, gen.random(m) * 0.2)


def _random_pool(gen: np.random.Generator) -> ScoredPool:
    n = int(gen.integers(4, 50))
    m = int(gen.integers(1, 40))
    if gen.random() < 0.5:
        cal = gen.integers(0, 8, n) / 7.0
        test = gen.integers(0, 8, m) / 7.0
    else:
        cal = gen.random(n)
        test = gen.random(m)
    null = gen.random(n) < 0.6
    if not null.any():
        null[0] = True
    return ScoredPool(cal, null, test)


def check_bh_self_consistent(seed_rng: RngStream, instances: int) -> EquivalenceReport:
    failures = []
    for i in range(instances):
        gen = seed_rng.child(i).generator()
        p = _random_pvalues(gen)
        alpha = float(gen.uniform(0.02, 0.5))
        a = bh_select(p, alpha)
        b = self_consistent_select(p, alpha)
        if not np.array_equal(a.selected, b.selected):
            failures.append({"instance": i, "pvalues": p.tolist(), "alpha": alpha})
    return EquivalenceReport("bh-vs-self-consistent", instances, tuple(failures))


def check_knockoff_deterministic(seed_rng: RngStream, instances: int) -> EquivalenceReport:
    failures = []
    for i in range(instances):
        gen = seed_rng.child(i).generator()
        pool = _random_pool(gen)
        alpha = float(gen.uniform(0.05, 0.5))
        ck = counting_knockoff_select(pool, alpha, TieMode.DETERMINISTIC)
        det = bh_select(generalized_conformal_pvalues(pool, TieMode.DETERMINISTIC), alpha)
        if not np.array_equal(ck.selected, det.selected):
            failures.append(
                {
                    "instance": i,
                    "cal_trust": pool.cal_trust.tolist(),
                    "cal_null": pool.cal_null.tolist(),
                    "test_trust": pool.test_trust.tolist(),
                    "alpha": alpha,
                }
            )
    return EquivalenceReport("knockoff-vs-deterministic-bh", instances, tuple(failures))


def check_cfbh_clipped(seed_rng: RngStream, instances: int) -> EquivalenceReport:
    failures = []
    for i in range(instances):
        gen = seed_rng.child(i, 0).generator()
        n = int(gen.integers(5, 60))
        m = int(gen.integers(1, 40))
        decimals = 1 if gen.random() < 0.4 else None
        mu_hat = _PolyPredictor(*gen.normal(0, 1, 3), decimals=decimals)
        x = gen.normal(0, 1, n + m)
        y = np.asarray(mu_hat(x)) + gen.normal(0, 0.8, n + m)
        cal = Dataset(x[:n, None], y[:n], REGRESSION)
        test = Dataset(x[n:, None], None, REGRESSION)
        c0 = float(gen.normal(0, 0.5))
        alpha = float(gen.uniform(0.05, 0.5))
        cfg = ProcedureConfig(
            alpha=alpha, score=AbsoluteResidual(mu_hat), constraint=HalfLine(c0)
        )
        u_rng = seed_rng.child(i, 1)
        a = run_cfbh(cal, test, cfg, u_rng)
        b = run_cfbh_plus(cal, test, cfg, u_rng)
        if not np.array_equal(a.selected, b.selected):
            failures.append({"instance": i, "c0": c0, "alpha": alpha, "n": n, "m": m})
    return EquivalenceReport("cfbh-vs-cfbh+-one-sided", instances, tuple(failures))


def _random_probs(gen: np.random.Generator, n: int, k: int, coarse: bool) -> np.ndarray:
    if coarse:
        raw = gen.integers(1, 6, (n, k)).astype(float)
    else:
        raw = gen.gamma(1.0, 1.0, (n, k))
    return raw / raw.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class _TableProbs:
    table: np.ndarray

    def __call__(self, X) -> np.ndarray:
        idx = np.asarray(X, dtype=float)
        idx = idx[:, 0] if idx.ndim == 2 else idx
        return self.table[idx.astype(int)]


def check_selective_classification(seed_rng: RngStream, instances: int) -> EquivalenceReport:
    failures = []
    for i in range(instances):
        gen = seed_rng.child(i).generator()
        n = int(gen.integers(5, 60))
        m = int(gen.integers(1, 40))
        k = int(gen.integers(2, 5))
        probs = _random_probs(gen, n + m, k, coarse=gen.random() < 0.4)
        cum = probs.cumsum(axis=1)
        labels = 1 + (gen.random((n + m, 1)) > cum[:, :-1]).sum(axis=1)
        alpha = float(gen.uniform(0.05, 0.5))
        p_hat = _TableProbs(probs)
        idx = np.arange(n + m, dtype=float)[:, None]
        cal = Dataset(idx[:n], labels[:n].astype(int), CLASSIFICATION)
        test = Dataset(idx[n:], None, CLASSIFICATION)
        y0 = int(gen.integers(1, k + 1))
        ours = run_selective_classification(
            cal, test, ProcedureConfig(alpha=alpha, score=OneMinusProb(p_hat), constraint=SingletonClass(y0))
        )
        ref = fasi_select(labels[:n], probs[:n, y0 - 1], probs[n:, y0 - 1], y0, alpha)
        if not np.array_equal(ours.selected, ref):
            failures.append({"instance": i, "variant": "target", "y0": y0, "alpha": alpha})
            continue
        ours_all = run_selective_classification(
            cal, test, ProcedureConfig(alpha=alpha, score=OneMinusProb(p_hat), constraint=MaxSize(1))
        )
        ref_all, ref_classes = zhao_su_select(labels[:n], probs[:n], probs[n:], alpha)
        same_sets = np.array_equal(ours_all.selected, ref_all)
        same_classes = all(
            pset == ClassSet((int(ref_classes[j]),)) for j, pset in ours_all.reported
        )
        if not (same_sets and same_classes):
            failures.append({"instance": i, "variant": "argmax", "alpha": alpha})
    return EquivalenceReport("selective-classification-references", instances, tuple(failures))


def run_equivalence_checks(seed: int, instances: int) -> list[EquivalenceReport]:
    """The four exact-equality checks on freshly drawn random instances."""
    root = RngStream(seed)
    return [
        check_bh_self_consistent(root.child(0), instances),
        check_knockoff_deterministic(root.child(1), instances),
        check_cfbh_clipped(root.child(2), instances),
        check_selective_classification(root.child(3), instances),
    ]
