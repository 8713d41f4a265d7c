"""Meta-tuning of incremental learning rates and regression of the rate formula.

Per (problem, linkage-set size, population size), the two learning rates are
tuned by treating them as a 2-D minimization problem whose objective is the
evaluation cost of inner incremental runs. The tuned samples are filtered on
the ill-conditioned rotated-ellipsoid results and regressed onto the
three-coefficient rate function with a sum-of-squares loss.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .distribution import learning_rate
from .optimizer import OptimizerConfig, population_guideline, run
from .problems import _from_callable, make_problem
from .seeding import expand_seed

__all__ = [
    "RateSample",
    "AlphaFit",
    "tune_rates",
    "reference_cost",
    "filter_samples",
    "fit_alphas",
    "eval_fit",
    "save_samples",
    "load_samples",
    "save_alpha_fit",
    "load_alpha_fit",
    "minimize_boxed",
]

TUNING_INIT_RANGE = (-10.0, 5.0)
ALPHA_BOUNDS = ((-10.0, 10.0), (0.0, 5.0), (0.0, 5.0))
FILTER_PROBLEM = "rotated-ellipsoid"


@dataclass
class RateSample:
    """One tuned learning-rate record for a (problem, kappa, population) cell."""

    problem: str
    kappa: int
    pop: int
    selection: int
    eta_cov: float
    eta_ams: float
    cost: float
    discarded: bool = False


@dataclass
class AlphaFit:
    """Regressed rate-function coefficients with the achieved loss."""

    alphas: tuple[float, float, float]
    loss: float
    sample_count: int
    degenerate: bool = False


def minimize_boxed(
    fn,
    bounds,
    *,
    seed: int = 0,
    restarts: int = 5,
    budget: float = 40000.0,
    population: int | None = None,
    max_generations: int | None = 3000,
) -> tuple[np.ndarray, float]:
    """Minimize a callable over a box with the package's full-covariance EDA.

    The search runs in the unit cube and maps points affinely into the box;
    out-of-cube candidates are clipped before evaluation. Returns the best
    (clipped, mapped) point seen across all restarts and evaluations.
    """
    bounds = np.asarray(bounds, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    d = len(bounds)
    best_x = lo + 0.5 * (hi - lo)
    best_f = math.inf

    def wrapped(u: np.ndarray) -> float:
        nonlocal best_x, best_f
        x = lo + np.clip(u, 0.0, 1.0) * (hi - lo)
        f = float(fn(x))
        if f < best_f:
            best_f = f
            best_x = x.copy()
        return f

    pop = population if population is not None else population_guideline("irv", d)
    problem = _from_callable(wrapped, d, init_range=(0.0, 1.0), name="boxed-objective")
    for r in range(restarts):
        cfg = OptimizerConfig(
            population_size=pop,
            variant="irv-gomea",
            linkage="full",
            vtr=-math.inf,
            budget=budget,
            seed=expand_seed(seed, r),
            max_generations=max_generations,
        )
        run(cfg, problem)
    return best_x, best_f


def reference_cost(
    problem_name: str,
    kappa: int,
    *,
    replicates: int = 10,
    base_seed: int = 0,
    cap: float = 1e7,
    problem_params: dict | None = None,
) -> float:
    """Mean evaluations-to-target of the non-incremental variant.

    Measured with a full-covariance model at its guideline population on the
    ``kappa``-dimensional instance; failed replicates are charged at the cap.
    """
    pop = population_guideline("rv", kappa)
    params = dict(problem_params or {})
    params.setdefault("init_range", TUNING_INIT_RANGE)
    problem = make_problem(problem_name, kappa, params)
    costs = []
    for r in range(replicates):
        cfg = OptimizerConfig(
            population_size=pop,
            variant="rv-gomea",
            linkage="full",
            budget=cap,
            seed=expand_seed(base_seed, 7000 + r),
        )
        res = run(cfg, problem)
        costs.append(res.evaluations_spent if res.success else cap)
    return float(np.mean(costs))


def tune_rates(
    problem_name: str,
    kappa: int,
    population_size: int,
    replicates: int = 10,
    *,
    base_seed: int = 0,
    problem_params: dict | None = None,
    reference: float | None = None,
    ref_replicates: int = 10,
    ref_cap: float = 1e7,
    budget_factor: float = 2.0,
    restarts: int = 5,
    outer_budget: float = 200.0,
) -> RateSample:
    """Tune the covariance and mean-shift learning rates for one cell.

    The outer 2-D search minimizes the mean evaluations-to-target of inner
    incremental runs over the unit square of rate pairs; inner runs share one
    replicate seed set so probes are comparable. The inner budget is
    ``budget_factor`` times the non-incremental reference cost. A sample is
    returned only if some probed pair reached the target in every replicate;
    otherwise the sample is marked discarded.
    """
    params = dict(problem_params or {})
    params.setdefault("init_range", TUNING_INIT_RANGE)
    problem = make_problem(problem_name, kappa, params)
    if reference is None:
        reference = reference_cost(
            problem_name,
            kappa,
            replicates=ref_replicates,
            base_seed=base_seed,
            cap=ref_cap,
            problem_params=problem_params,
        )
    budget = budget_factor * reference
    seeds = [expand_seed(base_seed, 9000 + r) for r in range(replicates)]
    best = {"etas": None, "cost": math.inf}

    def objective(etas: np.ndarray) -> float:
        costs = []
        successes = 0
        for r in range(replicates):
            cfg = OptimizerConfig(
                population_size=population_size,
                variant="irv-gomea",
                linkage="full",
                fixed_eta_cov=float(etas[0]),
                fixed_eta_ams=float(etas[1]),
                budget=budget,
                seed=seeds[r],
            )
            res = run(cfg, problem)
            if res.success:
                successes += 1
                costs.append(res.evaluations_spent)
            else:
                costs.append(budget)
        mean_cost = float(np.mean(costs))
        if successes == replicates and mean_cost < best["cost"]:
            best["cost"] = mean_cost
            best["etas"] = (float(etas[0]), float(etas[1]))
        return mean_cost

    minimize_boxed(
        objective,
        ((0.0, 1.0), (0.0, 1.0)),
        seed=expand_seed(base_seed, 31),
        restarts=restarts,
        budget=outer_budget,
    )
    selection = int(0.35 * population_size)
    if best["etas"] is None:
        return RateSample(
            problem_name, kappa, population_size, selection,
            math.nan, math.nan, math.inf, discarded=True,
        )
    return RateSample(
        problem_name, kappa, population_size, selection,
        best["etas"][0], best["etas"][1], best["cost"],
    )


def filter_samples(samples: list[RateSample]) -> list[RateSample]:
    """Drop every (kappa, pop) cell whose rotated-ellipsoid tuning failed.

    A cell qualifies only if a non-discarded rotated-ellipsoid sample exists
    for it; all samples in non-qualifying cells are removed. Idempotent.
    """
    qualified = {
        (s.kappa, s.pop)
        for s in samples
        if s.problem == FILTER_PROBLEM and not s.discarded
    }
    return [s for s in samples if (s.kappa, s.pop) in qualified]


def fit_alphas(
    samples: list[RateSample],
    target: str,
    *,
    seed: int = 0,
    restarts: int = 5,
    budget: float = 40000.0,
    bounds=ALPHA_BOUNDS,
) -> AlphaFit:
    """Regress rate-function coefficients onto tuned samples, least squares.

    ``target`` selects which rate is fitted: ``cov`` or ``ams``. The fit is
    degenerate (flagged, not rejected) when the samples cannot identify all
    three coefficients, e.g. when every sample shares one (selection, kappa)
    point.
    """
    if target not in ("cov", "ams"):
        raise ValueError(f"unknown fit target {target!r}")
    usable = [s for s in samples if not s.discarded]
    if len(usable) < 3:
        raise ValueError("need at least 3 samples to fit three coefficients")
    sel = np.asarray([s.selection for s in usable], dtype=float)
    kap = np.asarray([s.kappa for s in usable], dtype=float)
    eta = np.asarray(
        [s.eta_cov if target == "cov" else s.eta_ams for s in usable], dtype=float
    )
    design = np.column_stack([np.ones_like(sel), np.log(sel), np.log(kap)])
    degenerate = np.linalg.matrix_rank(design) < 3

    def loss(alpha: np.ndarray) -> float:
        a0, a1, a2 = alpha
        with np.errstate(over="ignore", invalid="ignore"):
            t = a0 * sel**a1 / kap**a2
            resid = eta - (1.0 - np.exp(t))
            val = float(resid @ resid)
        return val if math.isfinite(val) else math.inf

    best_alpha, best_loss = minimize_boxed(
        loss, bounds, seed=seed, restarts=restarts, budget=budget
    )
    return AlphaFit(tuple(float(a) for a in best_alpha), best_loss, len(usable), degenerate)


def eval_fit(fit: AlphaFit, selection_size: int, kappa: int) -> float:
    """Evaluate a fitted rate function at a (selection size, kappa) point."""
    return learning_rate(fit.alphas, selection_size, kappa)


# -- persistence -------------------------------------------------------------

_CSV_HEADER = ["problem", "kappa", "pop", "selection", "eta_cov", "eta_ams", "cost", "discarded"]


def save_samples(samples: list[RateSample], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_HEADER)
        for s in samples:
            writer.writerow(
                [
                    s.problem,
                    s.kappa,
                    s.pop,
                    s.selection,
                    repr(s.eta_cov),
                    repr(s.eta_ams),
                    repr(s.cost),
                    int(s.discarded),
                ]
            )


def load_samples(path) -> list[RateSample]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.append(
                RateSample(
                    problem=row["problem"],
                    kappa=int(row["kappa"]),
                    pop=int(row["pop"]),
                    selection=int(row["selection"]),
                    eta_cov=float(row["eta_cov"]),
                    eta_ams=float(row["eta_ams"]),
                    cost=float(row["cost"]),
                    discarded=bool(int(row["discarded"])),
                )
            )
    return out


def save_alpha_fit(fit: AlphaFit, path, target: str | None = None) -> None:
    payload = {
        "alphas": list(fit.alphas),
        "loss": fit.loss,
        "sample_count": fit.sample_count,
        "degenerate": fit.degenerate,
    }
    if target is not None:
        payload["target"] = target
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_alpha_fit(path) -> AlphaFit:
    with open(path) as fh:
        payload = json.load(fh)
    return AlphaFit(
        tuple(payload["alphas"]),
        payload["loss"],
        payload["sample_count"],
        payload.get("degenerate", False),
    )
