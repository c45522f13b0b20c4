"""Steering a classifier's output-class distribution through guided
targeted attacks: transition-matrix synthesis, attack backends, a
verification oracle, and an experiment runner."""

from .core import (
    ClassSet,
    ProbabilityVector,
    ReachabilityRecord,
    ReachabilityStats,
    ReachableSet,
    TransitionMatrix,
    normalize_proportions,
    records_from_jsonl,
    records_to_jsonl,
    stats_from_records,
    validate_distribution,
)
from .errors import (
    AllZeroSignalError,
    BackendFailureError,
    ClassdriftError,
    DegenerateRanksError,
    EmptyClassError,
    InfeasibleError,
    InvalidConfigError,
    MalformedProgramError,
    NegativeEntryError,
    NumericalFailureError,
    PlanInfeasibleError,
    SubsetOverflowError,
    SumNotOneError,
)
from .lp import LinearProgram, LpSolution, SolveStatus, solve
from .synthesis import (
    SynthesisConfig,
    SynthesisResult,
    laplace_smooth,
    method1,
    method2,
    method3,
    method4,
    synthesize,
    synthesize_method1,
    synthesize_method2,
    synthesize_method3,
    synthesize_method4,
    verify_matrix,
)
from .method4 import subset_distributions
from .attacks import (
    AdversarialExample,
    AffineClassifier,
    AttackBudget,
    SyntheticOracle,
    attack_targets,
    reachable_set,
    targeted_cw,
    targeted_deepfool,
    targeted_fgsm,
    targeted_pgd,
)
from .pipeline import (
    AttackOutcome,
    BatchSummary,
    ClassifierBackend,
    OracleBackend,
    PipelineRun,
    Sample,
    attack_one,
    renormalize_row,
    run_batch,
)
from .evaluation import (
    ExperimentPlan,
    IndependentReachBackend,
    MethodSpec,
    MetricReport,
    abs_diffs,
    db_distortion,
    expected_distribution,
    kl_divergence,
    run_experiment,
    sample_dirichlet_targets,
    spearman,
)
from .rng import stream

__version__ = "0.1.0"
