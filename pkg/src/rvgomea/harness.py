"""Experiment orchestration: replicate sweeps, population bisection, comparisons.

Everything is reproducible: replicate seeds are expanded deterministically
from a base seed, results are keyed and written in sorted cell order, and the
CSV / JSON-lines outputs are byte-identical across repeats regardless of the
worker count.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .optimizer import OptimizerConfig, population_guideline, run
from .problems import make_problem
from .seeding import expand_seed

__all__ = [
    "ExperimentSpec",
    "AggregateResult",
    "BisectResult",
    "run_experiment",
    "bisect_population",
    "bisect_search",
    "compare_ratio",
    "write_results_csv",
    "write_runs_jsonl",
    "write_compare_csv",
    "read_results_csv",
    "guideline_kappa",
    "expand_seed",
]

RESULTS_HEADER = [
    "problem", "ell", "variant", "linkage", "pop", "replicates",
    "success_rate", "mean_cost", "median_cost", "corrected_cost",
]

_BISECT_SEED_STRIDE = 1_000_003


@dataclass
class ExperimentSpec:
    """One experiment: a problem swept over dimensions and variants."""

    problem: str
    ells: list[int]
    variants: list[str] = field(default_factory=lambda: ["irv-gomea"])
    linkage: str = "full"
    linkage_block_size: int | None = None
    population: int | str = "guideline"
    replicates: int = 30
    base_seed: int = 0
    seeds: list[int] | None = None
    budget: float = 1e8
    vtr: float | None = None
    problem_params: dict = field(default_factory=dict)
    cost_denominator: str = "total-indices"
    workers: int = 1

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("need at least one replicate")
        if self.seeds is not None and len(self.seeds) != self.replicates:
            raise ValueError("explicit seed list must have one seed per replicate")


@dataclass
class AggregateResult:
    """Per-cell aggregate over replicates; cost fields are None when no run succeeded."""

    problem: str
    ell: int
    variant: str
    linkage: str
    pop: int
    replicates: int
    success_rate: float
    mean_cost: float | None
    median_cost: float | None
    corrected_cost: float | None
    failed: bool
    runs: list[dict] = field(default_factory=list)


@dataclass
class BisectResult:
    population: int | None
    corrected_cost: float
    probes: list[tuple[int, float]]
    failed: bool


def guideline_kappa(linkage: str, block_size: int | None, problem) -> int:
    """Linkage-set size the population guideline should be based on."""
    if linkage == "univariate":
        return 1
    if linkage == "blocks":
        if block_size is None:
            raise ValueError("block linkage needs a block size")
        return block_size
    if linkage == "full":
        return problem.ell
    return max(len(sp.indices) for sp in problem.subfunctions)


def _execute_run(task: dict) -> dict:
    problem = make_problem(
        task["problem"],
        task["ell"],
        dict(task["problem_params"]),
        cost_denominator=task["cost_denominator"],
    )
    cfg = OptimizerConfig(
        population_size=task["pop"],
        variant=task["variant"],
        linkage=task["linkage"],
        linkage_block_size=task["block_size"],
        budget=task["budget"],
        vtr=task["vtr"],
        seed=task["seed"],
    )
    res = run(cfg, problem)
    return {
        "problem": task["problem"],
        "ell": task["ell"],
        "variant": task["variant"],
        "linkage": task["linkage_label"],
        "pop": task["pop"],
        "replicate": task["replicate"],
        "seed": task["seed"],
        "success": res.success,
        "spent": res.evaluations_spent,
        "generations": res.generations,
        "fallback_events": res.fallback_events,
        "best_fitness": res.best_fitness,
    }


def _execute_all(tasks: list[dict], workers: int) -> list[dict]:
    if workers <= 1 or len(tasks) <= 1:
        return [_execute_run(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_execute_run, tasks, chunksize=1))


def _linkage_label(linkage: str, block_size: int | None) -> str:
    if linkage == "blocks":
        return f"blocks:{block_size}"
    return linkage


def _aggregate(cell_runs: list[dict]) -> AggregateResult:
    first = cell_runs[0]
    succ = [r["spent"] for r in cell_runs if r["success"]]
    rate = len(succ) / len(cell_runs)
    if succ:
        mean = float(np.mean(succ))
        median = float(np.median(succ))
        corrected = mean / rate
    else:
        mean = median = corrected = None
    return AggregateResult(
        problem=first["problem"],
        ell=first["ell"],
        variant=first["variant"],
        linkage=first["linkage"],
        pop=first["pop"],
        replicates=len(cell_runs),
        success_rate=rate,
        mean_cost=mean,
        median_cost=median,
        corrected_cost=corrected,
        failed=not succ,
        runs=cell_runs,
    )


def resolve_population(spec: ExperimentSpec, ell: int, variant: str) -> int:
    if isinstance(spec.population, int):
        return spec.population
    if spec.population == "guideline":
        probe = make_problem(spec.problem, ell, dict(spec.problem_params))
        kappa = guideline_kappa(spec.linkage, spec.linkage_block_size, probe)
        return population_guideline(variant, kappa)
    raise ValueError(f"unknown population policy {spec.population!r}")


def run_experiment(spec: ExperimentSpec, out: str | None = None) -> list[AggregateResult]:
    """Run every (ell, variant) cell of the spec and aggregate per cell.

    Cells execute in sorted (ell, variant) order; replicate ``r`` of cell ``c``
    uses seed ``expand_seed(base_seed, c * replicates + r)`` unless explicit
    seeds are given. With ``out`` set, writes ``<out>`` as the aggregate CSV
    and ``<out>.runs.jsonl`` with one object per run.
    """
    cells = sorted((ell, variant) for ell in spec.ells for variant in spec.variants)
    tasks = []
    for c_idx, (ell, variant) in enumerate(cells):
        pop = resolve_population(spec, ell, variant)
        for r in range(spec.replicates):
            seed = (
                spec.seeds[r]
                if spec.seeds is not None
                else expand_seed(spec.base_seed, c_idx * spec.replicates + r)
            )
            tasks.append(
                {
                    "problem": spec.problem,
                    "problem_params": spec.problem_params,
                    "ell": ell,
                    "variant": variant,
                    "linkage": spec.linkage,
                    "block_size": spec.linkage_block_size,
                    "linkage_label": _linkage_label(spec.linkage, spec.linkage_block_size),
                    "pop": pop,
                    "budget": spec.budget,
                    "vtr": spec.vtr,
                    "cost_denominator": spec.cost_denominator,
                    "seed": seed,
                    "replicate": r,
                }
            )
    results = _execute_all(tasks, spec.workers)
    by_cell: dict[tuple, list[dict]] = {}
    for row in results:
        by_cell.setdefault((row["ell"], row["variant"]), []).append(row)
    aggregates = []
    for ell, variant in cells:
        cell_runs = sorted(by_cell[(ell, variant)], key=lambda r: r["replicate"])
        aggregates.append(_aggregate(cell_runs))
    if out is not None:
        write_results_csv(aggregates, out)
        write_runs_jsonl(aggregates, f"{out}.runs.jsonl")
    return aggregates


# -- population bisection ----------------------------------------------------


def bisect_search(cost_fn, start: int, floor: int = 4) -> BisectResult:
    """Find the cheapest population size by halving, then binary search.

    Halves from ``start`` while cost keeps strictly improving; once it stops,
    binary-searches the interval spanned by the last two probes. Returns the
    argmin over all probes, ties to the smaller population. The search costs
    O(log(start)) evaluator calls.
    """
    if start < floor:
        raise ValueError(f"start population {start} below floor {floor}")
    probes: list[tuple[int, float]] = []

    def probe(n: int) -> float:
        c = float(cost_fn(n))
        probes.append((n, c))
        return c

    n_prev, c_prev = start, probe(start)
    while True:
        n_half = n_prev // 2
        if n_half < floor:
            break
        c_half = probe(n_half)
        if c_half < c_prev:
            n_prev, c_prev = n_half, c_half
            continue
        lo, c_lo, hi, c_hi = n_half, c_half, n_prev, c_prev
        while hi - lo > 1:
            mid = (lo + hi) // 2
            c_mid = probe(mid)
            if c_lo <= c_hi:
                hi, c_hi = mid, c_mid
            else:
                lo, c_lo = mid, c_mid
        break
    best_n, best_c = min(probes, key=lambda t: (t[1], t[0]))
    if not math.isfinite(best_c):
        return BisectResult(None, math.inf, probes, failed=True)
    return BisectResult(best_n, best_c, probes, failed=False)


def bisect_population(
    problem: str,
    ell: int,
    variant: str,
    linkage: str = "full",
    linkage_block_size: int | None = None,
    start: int | None = None,
    replicates: int = 30,
    *,
    base_seed: int = 0,
    budget: float = 1e8,
    vtr: float | None = None,
    problem_params: dict | None = None,
    cost_denominator: str = "total-indices",
    workers: int = 1,
    floor: int = 4,
    cost_evaluator=None,
) -> BisectResult:
    """Bisect the population size of one configuration by corrected cost.

    The start defaults to the non-incremental guideline for the configuration's
    linkage-set size. Probe seeds derive from ``base_seed`` and the probed
    population so repeated probes are reproducible. ``cost_evaluator`` (a
    ``population -> corrected cost`` callable) replaces the replicate runner
    when given, e.g. for dry analysis.
    """
    params = dict(problem_params or {})
    if start is None:
        probe_problem = make_problem(problem, ell, dict(params))
        start = max(floor, population_guideline("rv", guideline_kappa(linkage, linkage_block_size, probe_problem)))

    if cost_evaluator is None:

        def cost_evaluator(pop: int) -> float:
            tasks = [
                {
                    "problem": problem,
                    "problem_params": params,
                    "ell": ell,
                    "variant": variant,
                    "linkage": linkage,
                    "block_size": linkage_block_size,
                    "linkage_label": _linkage_label(linkage, linkage_block_size),
                    "pop": pop,
                    "budget": budget,
                    "vtr": vtr,
                    "cost_denominator": cost_denominator,
                    "seed": expand_seed(base_seed, pop * _BISECT_SEED_STRIDE + r),
                    "replicate": r,
                }
                for r in range(replicates)
            ]
            agg = _aggregate(_execute_all(tasks, workers))
            return agg.corrected_cost if agg.corrected_cost is not None else math.inf

    return bisect_search(cost_evaluator, start, floor=floor)


# -- comparisons -------------------------------------------------------------


def compare_ratio(
    rows_a: list[AggregateResult], rows_b: list[AggregateResult]
) -> list[dict]:
    """Per-cell corrected-cost ratios a/b, matched on (problem, ell).

    Cells missing on either side, or with no successful runs, get an empty
    ratio and an explanatory note instead of a fabricated number.
    """
    index_b = {(r.problem, r.ell): r for r in rows_b}
    out = []
    for a in rows_a:
        key = (a.problem, a.ell)
        b = index_b.get(key)
        row = {
            "problem": a.problem,
            "ell": a.ell,
            "corrected_a": a.corrected_cost,
            "corrected_b": b.corrected_cost if b is not None else None,
            "ratio": None,
            "note": "",
        }
        if b is None:
            row["note"] = "missing in b"
        elif a.corrected_cost is None:
            row["note"] = "a failed"
        elif b.corrected_cost is None:
            row["note"] = "b failed"
        else:
            row["ratio"] = a.corrected_cost / b.corrected_cost
        out.append(row)
    return out


# -- persistence -------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_results_csv(rows: list[AggregateResult], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULTS_HEADER)
        for r in rows:
            writer.writerow(
                [
                    r.problem, r.ell, r.variant, r.linkage, r.pop, r.replicates,
                    _fmt(r.success_rate), _fmt(r.mean_cost), _fmt(r.median_cost),
                    _fmt(r.corrected_cost),
                ]
            )


def read_results_csv(path) -> list[AggregateResult]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(
                AggregateResult(
                    problem=rec["problem"],
                    ell=int(rec["ell"]),
                    variant=rec["variant"],
                    linkage=rec["linkage"],
                    pop=int(rec["pop"]),
                    replicates=int(rec["replicates"]),
                    success_rate=float(rec["success_rate"]),
                    mean_cost=float(rec["mean_cost"]) if rec["mean_cost"] else None,
                    median_cost=float(rec["median_cost"]) if rec["median_cost"] else None,
                    corrected_cost=float(rec["corrected_cost"]) if rec["corrected_cost"] else None,
                    failed=not rec["mean_cost"],
                )
            )
    return rows


def write_runs_jsonl(rows: list[AggregateResult], path) -> None:
    with open(path, "w") as fh:
        for agg in rows:
            for rec in agg.runs:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def write_compare_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["problem", "ell", "corrected_a", "corrected_b", "ratio", "note"])
        for r in rows:
            writer.writerow(
                [
                    r["problem"], r["ell"], _fmt(r["corrected_a"]),
                    _fmt(r["corrected_b"]), _fmt(r["ratio"]), r["note"],
                ]
            )
