"""Gray-box real-valued optimization with RV-GOMEA and iRV-GOMEA.

Decomposable benchmark problems with partial evaluations, fitness-based
linkage learning into conditional linkage sets, per-set Gaussian models with
incremental (cross-generation) estimation, and a reproducible experiment
harness.
"""

from .distribution import (
    DEFAULT_AMS_ALPHAS,
    DEFAULT_COV_ALPHAS,
    LearningRates,
    SamplingModel,
    incremental_update,
    learning_rate,
    ml_estimate,
    transfer_covariance,
)
from .harness import (
    AggregateResult,
    BisectResult,
    ExperimentSpec,
    bisect_population,
    compare_ratio,
    run_experiment,
)
from .linkage import (
    Dsm,
    FosElement,
    LinkageModel,
    Vig,
    build_vig,
    clique_seeding,
    dependency_test,
    static_model,
    update_dsm_incremental,
)
from .optimizer import (
    OptimizerConfig,
    RunResult,
    RunState,
    generation,
    initialize,
    population_guideline,
    run,
)
from .problems import (
    BudgetExhaustedError,
    EvaluationLedger,
    PROBLEM_NAMES,
    ProblemInstance,
    SubvalueCache,
    make_problem,
)
from .rates import AlphaFit, RateSample, eval_fit, filter_samples, fit_alphas, tune_rates
from .seeding import expand_seed

__version__ = "0.1.0"
