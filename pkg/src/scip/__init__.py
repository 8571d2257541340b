"""Selective prediction with false coverage rate control under informativeness constraints."""

from .conformal import (
    AbsoluteResidual,
    CalibrationScores,
    ClippedScore,
    OneMinusProb,
    ClassLabels,
    RealLine,
    conformal_prediction_set,
    i_adjusted_pvalue,
    i_adjusted_pvalues,
    truncated_i_adjusted_pvalue,
)
from .constructors import (
    argmax_class_constructor,
    cp_truncated_constructor,
    directional_constructor,
    fixed_constructor,
)
from .core import (
    CalibrationRecord,
    ClassSet,
    Dataset,
    HalfLine,
    InformativeConstraint,
    Interval,
    IntervalUnion,
    LowerBoundedInterval,
    MaxSize,
    PositiveInterval,
    RngStream,
    ScipError,
    SingletonClass,
    TargetHalfLines,
    TestRecord,
    half_line_above,
    half_line_below,
    interval,
    set_contains,
    set_measure,
)
from .metrics import aggregate, mfcr_estimate, replication_metrics
from .procedures import (
    ProcedureConfig,
    ProcedureOutput,
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
from .selection import (
    ScoredPool,
    SelectionResult,
    TieMode,
    bh_select,
    counting_knockoff_select,
    generalized_conformal_pvalues,
    scip_select,
    self_consistent_select,
)
from .simgen import gen_classification, gen_regression, gen_synthetic_scores, mu_star
from .trust import (
    diversity_scores,
    distance_trust,
    monotone_trust,
    probability_trust,
    train_pu_classifier,
    train_trust_classifier,
)

__version__ = "0.1.0"
