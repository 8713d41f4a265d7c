"""Generation loop for RV-GOMEA and its incremental variant iRV-GOMEA.

One generation: truncation selection, (online) linkage refresh with
covariance transfer, per-linkage-set model updates, gene-pool optimal mixing
with not-worse acceptance, a conditional repair sweep, anticipated-mean-shift
moves, and adaptive variance scaling. Runs are strictly single-threaded and
fully determined by (seed, config, problem).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import distribution as dist
from . import linkage as lk
from .problems import (
    BudgetExhaustedError,
    EvaluationLedger,
    PartialPlan,
    ProblemInstance,
    SubvalueCache,
)

__all__ = [
    "OptimizerConfig",
    "RunState",
    "RunResult",
    "initialize",
    "gom_step",
    "repair_step",
    "generation",
    "run",
    "population_guideline",
]

LINKAGE_KINDS = ("univariate", "blocks", "full", "true-vig", "fitness-based")


def population_guideline(variant: str, kappa: int) -> int:
    """Default population size for a linkage set of ``kappa`` variables."""
    if kappa < 1:
        raise ValueError("kappa must be positive")
    v = _norm_variant(variant)
    if v == "irv-gomea":
        return 10 + 3 * kappa
    return int(round(17.0 + 3.0 * kappa**1.5))


def _norm_variant(variant: str) -> str:
    v = variant.strip().lower()
    if v in ("irv", "irv-gomea"):
        return "irv-gomea"
    if v in ("rv", "rv-gomea"):
        return "rv-gomea"
    raise ValueError(f"unknown variant {variant!r}")


@dataclass
class OptimizerConfig:
    """Run parameters. Unset fields default per variant/problem at initialize."""

    population_size: int
    variant: str = "irv-gomea"
    linkage: str = "full"
    linkage_block_size: int | None = None
    tau: float = 0.35
    forced_accept_prob: float = 0.0
    multiplier_decrease: float | None = None
    nis_max: int | None = None
    vtr: float | None = None
    budget: float = math.inf
    seed: int = 0
    cov_alphas: tuple[float, float, float] = dist.DEFAULT_COV_ALPHAS
    ams_alphas: tuple[float, float, float] = dist.DEFAULT_AMS_ALPHAS
    fixed_eta_cov: float | None = None
    fixed_eta_ams: float | None = None
    dsm_pair_budget: int | None = None
    ams_delta: float = 2.0
    ams_scope: str = "per-element"
    max_generations: int | None = None
    telemetry: bool = False

    def __post_init__(self):
        self.variant = _norm_variant(self.variant)
        if self.population_size < 2:
            raise ValueError("population size must be at least 2")
        if int(self.tau * self.population_size) < 1:
            raise ValueError("selection would be empty; raise tau or the population size")
        if not 0.0 <= self.forced_accept_prob <= 1.0:
            raise ValueError("forced acceptance probability must lie in [0, 1]")
        if self.linkage not in LINKAGE_KINDS:
            raise ValueError(f"unknown linkage kind {self.linkage!r}")
        if self.ams_scope not in ("per-element", "global"):
            raise ValueError(f"unknown AMS scope {self.ams_scope!r}")

    @property
    def incremental(self) -> bool:
        return self.variant == "irv-gomea"

    def resolved_decrease(self) -> float:
        if self.multiplier_decrease is not None:
            return self.multiplier_decrease
        if self.incremental:
            return dist.MULTIPLIER_DECREASE_ASYMMETRIC
        return dist.MULTIPLIER_DECREASE_CLASSIC


@dataclass
class RunResult:
    success: bool
    evaluations_spent: float
    generations: int
    best_fitness: float
    fallback_events: int
    wall_time: float
    telemetry: list = field(default_factory=list)


class RunState:
    """Mutable per-run state: population, caches, models, counters."""

    def __init__(self, config: OptimizerConfig, problem: ProblemInstance):
        self.config = config
        self.problem = problem
        self.rng = np.random.default_rng(config.seed)
        self.ledger = EvaluationLedger(budget=config.budget)
        self.vtr = problem.vtr if config.vtr is None else config.vtr
        self.nis_max = (25 + problem.ell) if config.nis_max is None else config.nis_max
        self.pop: np.ndarray | None = None
        self.caches: list[SubvalueCache] = []
        self.linkage: lk.LinkageModel | None = None
        self.models: list[dist.SamplingModel] = []
        self.plans: list[PartialPlan] = []
        self.repair_plan: PartialPlan | None = None
        self.dsm: lk.Dsm | None = None
        self.vig: lk.Vig | None = None
        self.nis = 0
        self.generation = 0
        self.best_fitness = math.inf
        self.best_x: np.ndarray | None = None
        self.prev_sel_mean: np.ndarray | None = None
        self.global_ams = np.zeros(problem.ell)
        self.fallback_events = 0
        self.telemetry: list[dict] = []
        # per-generation GOM improvement stats, one slot per element
        self._imp_count: np.ndarray | None = None
        self._imp_sum: list[np.ndarray] = []

    def fitness_vector(self) -> np.ndarray:
        return np.asarray([c.fitness for c in self.caches])

    def _note_best(self, fitness: float, row: np.ndarray) -> None:
        if fitness < self.best_fitness:
            self.best_fitness = fitness
            self.best_x = row.copy()

    def _selection_size(self) -> int:
        return int(self.config.tau * self.config.population_size)


def _build_static_linkage(config: OptimizerConfig, problem: ProblemInstance) -> lk.LinkageModel:
    if config.linkage == "univariate":
        return lk.static_model("univariate", problem)
    if config.linkage == "blocks":
        return lk.static_model("marginal-product", problem, kappa=config.linkage_block_size)
    if config.linkage == "full":
        return lk.static_model("full", problem)
    if config.linkage == "true-vig":
        return lk.static_model("conditional-true-vig", problem)
    # fitness-based starts from the optimistic fully-independent model
    els = [lk.FosElement((i,)) for i in range(problem.ell)]
    return lk.LinkageModel(els, "fitness-based-online")


def _install_linkage(
    state: RunState,
    model: lk.LinkageModel,
    selection: np.ndarray,
    carry_from: list[dist.SamplingModel] | None = None,
) -> None:
    """Attach a linkage model, building sampling models and evaluation plans.

    With ``carry_from`` given (online relearning), identical elements keep
    their model object, and new elements get transferred covariance seeds
    plus multiplier/mean-shift carry-over from any element with the same
    sampled set.
    """
    covered = set()
    for el in model.elements:
        covered.update(el.sampled)
    if covered != set(range(state.problem.ell)):
        raise ValueError("linkage model does not cover the problem variables")

    by_identity = {}
    by_sampled = {}
    for m in carry_from or []:
        by_identity[(m.element.sampled, m.element.conditioned_on)] = m
        by_sampled.setdefault(m.element.sampled, m)

    models: list[dist.SamplingModel] = []
    for el in model.elements:
        prev = by_identity.get((el.sampled, el.conditioned_on))
        if prev is not None:
            models.append(prev)
            continue
        if carry_from:
            seed = dist.transfer_covariance(carry_from, el, selection, state.rng)
        else:
            _, full_diag = dist.ml_estimate(selection, el.involved)
            seed = np.diag(np.diag(full_diag))
        mean, _ = dist.ml_estimate(selection, el.involved)
        m = dist.SamplingModel(el, mean, seed)
        same_i0 = by_sampled.get(el.sampled)
        if same_i0 is not None:
            m.c_mult = same_i0.c_mult
            m.ams_shift = same_i0.ams_shift.copy()
        models.append(m)

    state.linkage = model
    state.models = models
    state.plans = [state.problem.partial_plan(el.sampled) for el in model.elements]
    state.repair_plan = state.problem.partial_plan(sorted(covered))


def initialize(config: OptimizerConfig, problem: ProblemInstance) -> RunState:
    """Sample and evaluate the initial population; build linkage and models.

    Covariances start as diagonal maximum-likelihood variances of the initial
    selection with zero covariances.
    """
    state = RunState(config, problem)
    n = config.population_size
    if config.budget < n:
        raise BudgetExhaustedError(
            f"budget {config.budget} cannot evaluate an initial population of {n}"
        )
    lo, hi = problem.init_range
    state.pop = state.rng.uniform(lo, hi, size=(n, problem.ell))
    for row in state.pop:
        fit, cache = problem.evaluate_full(row, state.ledger)
        state.caches.append(cache)
        state._note_best(fit, row)

    if config.linkage == "fitness-based":
        state.dsm = lk.Dsm.empty(problem.ell)
    fits = state.fitness_vector()
    sel_idx = np.argsort(fits, kind="stable")[: state._selection_size()]
    selection = state.pop[sel_idx].copy()
    _install_linkage(state, _build_static_linkage(config, problem), selection)
    state.prev_sel_mean = selection.mean(axis=0)
    return state


def gom_step(state: RunState, element_index: int, sol_index: int, proposal=None) -> bool:
    """Resample one linkage set of one solution; keep the change iff not worse.

    A rejected step restores coordinates, cached subvalues, and fitness
    bit-identically. With the configured forced-acceptance probability the
    change may be kept regardless.
    """
    model = state.models[element_index]
    plan = state.plans[element_index]
    pop = state.pop
    i0 = model.i0_global
    if proposal is None:
        cond = pop[sol_index, model.i1_global] if model.conditional else None
        proposal = model.sample(state.rng, conditioning=cond)
    cache = state.caches[sol_index]
    old_vals = pop[sol_index, i0].copy()
    old_fit = cache.fitness
    snapshot = cache.values[plan.sf_ids].copy()
    pop[sol_index, i0] = proposal
    try:
        new_fit = state.problem.evaluate_plan(pop[sol_index], plan, cache, state.ledger)
    except BudgetExhaustedError:
        pop[sol_index, i0] = old_vals
        raise
    accept = new_fit <= old_fit
    if not accept and state.config.forced_accept_prob > 0.0:
        accept = state.rng.random() < state.config.forced_accept_prob
    if accept:
        if new_fit < old_fit:
            # Variance scaling reacts to offspring that beat the best-so-far:
            # only those mark progress beyond the current distribution.
            if new_fit < state.best_fitness and state._imp_count is not None:
                state._imp_count[element_index] += 1
                state._imp_sum[element_index] += pop[sol_index, i0]
            state._note_best(new_fit, pop[sol_index])
    else:
        pop[sol_index, i0] = old_vals
        cache.values[plan.sf_ids] = snapshot
        cache.fitness = old_fit
    return accept


def repair_step(state: RunState, sol_index: int) -> bool:
    """Resample every linkage set of one solution without intermediate tests.

    The sweep follows the conditionally factorized joint: each set conditions
    on current, possibly just-resampled, values. One accumulated partial
    evaluation afterwards; the change is kept iff not worse.
    """
    pop = state.pop
    cache = state.caches[sol_index]
    row = pop[sol_index]
    old_row = row.copy()
    old_values = cache.values.copy()
    old_fit = cache.fitness
    for k in state.rng.permutation(len(state.models)):
        model = state.models[k]
        cond = row[model.i1_global] if model.conditional else None
        row[model.i0_global] = model.sample(state.rng, conditioning=cond)
    try:
        new_fit = state.problem.evaluate_plan(row, state.repair_plan, cache, state.ledger)
    except BudgetExhaustedError:
        pop[sol_index] = old_row
        raise
    if new_fit <= old_fit:
        state._note_best(new_fit, row)
        return True
    pop[sol_index] = old_row
    cache.values[:] = old_values
    cache.fitness = old_fit
    return False


def _refresh_online_linkage(state: RunState, selection: np.ndarray) -> None:
    if state.dsm is None or state.dsm.fully_tested:
        return
    budget = state.config.dsm_pair_budget
    if budget is None:
        budget = state.problem.ell
    fits = state.fitness_vector()
    ref = int(np.argmin(fits))
    lk.update_dsm_incremental(
        state.dsm,
        state.problem,
        state.pop[ref],
        budget,
        state.ledger,
        state.rng,
        cache=state.caches[ref],
    )
    state.vig = lk.build_vig(state.dsm)
    new_model = lk.clique_seeding(state.vig)
    _install_linkage(state, new_model, selection, carry_from=state.models)


def _update_models(state: RunState, selection: np.ndarray, delta_full: np.ndarray) -> None:
    cfg = state.config
    s_size = len(selection)
    mode = "incremental" if cfg.incremental else "full-reestimate"
    if cfg.ams_scope == "global":
        eta_g = (
            cfg.fixed_eta_ams
            if cfg.fixed_eta_ams is not None
            else dist.learning_rate(cfg.ams_alphas, s_size, state.problem.ell)
        )
        if cfg.incremental:
            state.global_ams = dist.incremental_update(state.global_ams, delta_full, eta_g)
        else:
            state.global_ams = delta_full.copy()
    for model in state.models:
        kappa = len(model.involved)
        eta_cov = (
            cfg.fixed_eta_cov
            if cfg.fixed_eta_cov is not None
            else dist.learning_rate(cfg.cov_alphas, s_size, kappa)
        )
        eta_ams = (
            cfg.fixed_eta_ams
            if cfg.fixed_eta_ams is not None
            else dist.learning_rate(cfg.ams_alphas, s_size, kappa)
        )
        rates = dist.LearningRates(eta_cov, eta_ams)
        dist.update_model(model, selection, delta_full, rates, mode)
        if cfg.ams_scope == "global":
            model.ams_shift = state.global_ams[model.i0_global].copy()
        if model.prepare():
            state.fallback_events += 1


def _gom_pass(state: RunState) -> None:
    n = state.config.population_size
    for k in state.rng.permutation(len(state.models)):
        model = state.models[k]
        cond = state.pop[:, model.i1_global] if model.conditional else None
        proposals = model.sample(state.rng, conditioning=cond, size=n)
        for s in range(n):
            gom_step(state, int(k), s, proposal=proposals[s])


def _repair_pass(state: RunState) -> None:
    # Same semantics as repair_step per solution, but the sweep order is
    # shared across the population so each element samples in one batch.
    pop = state.pop
    n = state.config.population_size
    old_pop = pop.copy()
    old_fits = [c.fitness for c in state.caches]
    old_values = [c.values.copy() for c in state.caches]
    for k in state.rng.permutation(len(state.models)):
        model = state.models[k]
        cond = pop[:, model.i1_global] if model.conditional else None
        pop[:, model.i0_global] = model.sample(state.rng, conditioning=cond, size=n)
    done = 0
    try:
        for s in range(n):
            new_fit = state.problem.evaluate_plan(
                pop[s], state.repair_plan, state.caches[s], state.ledger
            )
            done = s + 1
            if new_fit <= old_fits[s]:
                state._note_best(new_fit, pop[s])
            else:
                pop[s] = old_pop[s]
                state.caches[s].values[:] = old_values[s]
                state.caches[s].fitness = old_fits[s]
    except BudgetExhaustedError:
        pop[done:] = old_pop[done:]
        raise


def ams_count(tau: float, population_size: int) -> int:
    """How many solutions per linkage set receive the anticipated mean shift."""
    return int(0.5 * tau * population_size)


def _ams_pass(state: RunState) -> None:
    cfg = state.config
    n = cfg.population_size
    count = ams_count(cfg.tau, n)
    if count < 1:
        return
    pop = state.pop
    for k, model in enumerate(state.models):
        shift = cfg.ams_delta * model.c_mult * model.ams_shift
        if not np.any(shift):
            continue
        plan = state.plans[k]
        i0 = model.i0_global
        for s in state.rng.choice(n, size=count, replace=False):
            cache = state.caches[s]
            old_vals = pop[s, i0].copy()
            old_fit = cache.fitness
            snapshot = cache.values[plan.sf_ids].copy()
            pop[s, i0] = dist.apply_ams(old_vals, model, cfg.ams_delta)
            try:
                new_fit = state.problem.evaluate_plan(pop[s], plan, cache, state.ledger)
            except BudgetExhaustedError:
                pop[s, i0] = old_vals
                raise
            if new_fit <= old_fit:
                state._note_best(new_fit, pop[s])
            else:
                pop[s, i0] = old_vals
                cache.values[plan.sf_ids] = snapshot
                cache.fitness = old_fit


def generation(state: RunState) -> RunState:
    """Advance the run by one generation."""
    cfg = state.config
    best_at_start = state.best_fitness

    fits = state.fitness_vector()
    sel_idx = np.argsort(fits, kind="stable")[: state._selection_size()]
    selection = state.pop[sel_idx].copy()
    sel_mean = selection.mean(axis=0)
    delta_full = sel_mean - state.prev_sel_mean
    state.prev_sel_mean = sel_mean

    _refresh_online_linkage(state, selection)
    _update_models(state, selection, delta_full)

    state._imp_count = np.zeros(len(state.models), dtype=int)
    state._imp_sum = [np.zeros(len(m.i0_local)) for m in state.models]
    _gom_pass(state)
    if state.linkage.is_conditional:
        _repair_pass(state)
    _ams_pass(state)

    improved = state.best_fitness < best_at_start
    state.nis = 0 if improved else state.nis + 1
    decrease = cfg.resolved_decrease()
    for k, model in enumerate(state.models):
        got = state._imp_count[k] > 0
        sdr = model.sdr(state._imp_sum[k] / state._imp_count[k]) if got else 0.0
        dist.update_multiplier(model, got, sdr, state.nis, state.nis_max, decrease)
    state._imp_count = None
    state._imp_sum = []

    state.generation += 1
    if cfg.telemetry:
        mults = [m.c_mult for m in state.models]
        state.telemetry.append(
            {
                "generation": state.generation,
                "best_fitness": state.best_fitness,
                "spent": state.ledger.spent,
                "c_mult_min": min(mults),
                "c_mult_max": max(mults),
                "fallback_events": state.fallback_events,
            }
        )
    return state


def run(config: OptimizerConfig, problem: ProblemInstance) -> RunResult:
    """Run to the target value, budget exhaustion, or population collapse."""
    t0 = time.perf_counter()
    try:
        state = initialize(config, problem)
    except BudgetExhaustedError:
        return RunResult(False, 0.0, 0, math.inf, 0, time.perf_counter() - t0)
    success = False
    while True:
        if state.best_fitness <= state.vtr:
            success = True
            break
        if float(np.var(state.fitness_vector())) <= 0.0:
            break
        if config.max_generations is not None and state.generation >= config.max_generations:
            break
        try:
            generation(state)
        except BudgetExhaustedError:
            success = state.best_fitness <= state.vtr
            break
    return RunResult(
        success=success,
        evaluations_spent=state.ledger.spent,
        generations=state.generation,
        best_fitness=state.best_fitness,
        fallback_events=state.fallback_events,
        wall_time=time.perf_counter() - t0,
        telemetry=state.telemetry,
    )
