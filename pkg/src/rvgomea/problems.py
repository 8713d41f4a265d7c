"""Benchmark objectives as sums of subfunctions, with partial-evaluation accounting.

Every problem is a sum of subfunctions, each depending on a small index set.
Changing a few variables only requires re-evaluating the subfunctions whose
index sets were touched; the evaluation ledger charges such partial updates
fractionally so that costs stay comparable to full (black-box) evaluations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "BudgetExhaustedError",
    "EvaluationLedger",
    "SubvalueCache",
    "SubfunctionSpec",
    "ProblemInstance",
    "make_problem",
    "PROBLEM_NAMES",
    "rotation_matrix",
]

# Subfunction kinds.
POWER = "power"  # weight * |x_i|^exponent, singleton
LINEAR = "linear"  # weight * x_i, singleton
SQRT_SUM = "sqrt-sum"  # weight * sqrt(sum x_i^2)
ELLIPSOID = "ellipsoid"  # conditioned quadratic over a rotated block
ROSENBROCK = "rosenbrock"  # 100*(x_i^2 - x_{i+1})^2 + (x_i - 1)^2
CUSTOM = "custom"  # arbitrary callable (internal use only)

DEFAULT_INIT_RANGE = (-115.0, -100.0)


class BudgetExhaustedError(RuntimeError):
    """Raised when an evaluation would exceed the ledger budget.

    Signals run termination, not state corruption: the ledger and any caches
    are left untouched by the refused evaluation.
    """


@dataclass
class EvaluationLedger:
    """Tracks evaluation cost in units of full-evaluation equivalents."""

    budget: float = math.inf
    spent: float = 0.0

    def charge(self, amount: float) -> None:
        if self.spent + amount > self.budget:
            raise BudgetExhaustedError(
                f"evaluation budget exhausted (spent={self.spent}, "
                f"charge={amount}, budget={self.budget})"
            )
        self.spent += amount

    @property
    def remaining(self) -> float:
        return self.budget - self.spent


@dataclass
class SubvalueCache:
    """Per-solution cache of subfunction values and their aggregate fitness."""

    values: np.ndarray
    fitness: float

    def copy(self) -> "SubvalueCache":
        return SubvalueCache(self.values.copy(), self.fitness)


@dataclass(frozen=True)
class SubfunctionSpec:
    """One additive term of an objective.

    ``condition`` and ``angle_deg`` only apply to ellipsoid blocks; ``weight``
    and ``exponent`` only to power/linear/sqrt-sum terms.
    """

    indices: tuple[int, ...]
    kind: str
    weight: float = 1.0
    exponent: float = 2.0
    condition: float = 0.0
    angle_deg: float = 0.0
    fn: Callable[[np.ndarray], float] | None = field(default=None, repr=False)


def rotation_matrix(dim: int, angle_deg: float) -> np.ndarray:
    """Orthogonal rotation built from Givens rotations of ``angle_deg`` degrees.

    One rotation per index pair (i, j), i < j, applied in lexicographic order.
    """
    r = np.eye(dim)
    if dim < 2 or angle_deg == 0.0:
        return r
    theta = math.radians(angle_deg)
    c, s = math.cos(theta), math.sin(theta)
    for i in range(dim - 1):
        for j in range(i + 1, dim):
            ri = c * r[i] - s * r[j]
            rj = s * r[i] + c * r[j]
            r[i], r[j] = ri, rj
    return r


def _ellipsoid_weights(width: int, condition: float) -> np.ndarray:
    if width == 1:
        return np.ones(1)
    exps = condition * np.arange(width) / (width - 1)
    return 10.0 ** exps


class _GroupView:
    """A fixed row subset of one group, with everything pre-sliced for speed."""

    def __init__(self, group: "_Group", rows: np.ndarray):
        self.kind = group.kind
        self.sf_ids = group.sf_ids[rows]
        self.idx = group.idx[rows]
        kind = group.kind
        if kind == ELLIPSOID:
            self.rot_t = group.rot.T.copy()
            self.ell_weights = group.ell_weights
        elif kind in (POWER, LINEAR):
            self.flat_idx = self.idx[:, 0]
            self.weights = group.weights[rows]
            self.exponents = group.exponents[rows]
            self.all_square = kind == POWER and bool(np.all(self.exponents == 2.0))
        elif kind == SQRT_SUM:
            self.weights = group.weights[rows]
        elif kind == CUSTOM:
            self.fns = [group.fns[r] for r in rows]

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        kind = self.kind
        if kind == ELLIPSOID:
            w = x[self.idx] @ self.rot_t
            return (w * w) @ self.ell_weights
        if kind == POWER:
            v = x[self.flat_idx]
            if self.all_square:
                return self.weights * v * v
            return self.weights * np.abs(v) ** self.exponents
        if kind == LINEAR:
            return self.weights * x[self.flat_idx]
        if kind == ROSENBROCK:
            p = x[self.idx]
            a, b = p[:, 0], p[:, 1]
            return 100.0 * (a * a - b) ** 2 + (a - 1.0) ** 2
        if kind == SQRT_SUM:
            w = x[self.idx]
            return self.weights * np.sqrt(np.einsum("ij,ij->i", w, w))
        if kind == CUSTOM:
            sub = x[self.idx]
            return np.asarray([fn(row) for fn, row in zip(self.fns, sub)])
        raise AssertionError(f"unknown subfunction kind {kind!r}")


class _Group:
    """Subfunctions of one kind sharing shape parameters."""

    def __init__(self, kind: str, sf_ids: list[int], specs: list[SubfunctionSpec]):
        self.kind = kind
        self.sf_ids = np.asarray(sf_ids, dtype=np.intp)
        self.idx = np.asarray([sp.indices for sp in specs], dtype=np.intp)
        self.rot: np.ndarray | None = None
        if kind == ELLIPSOID:
            width = self.idx.shape[1]
            sp = specs[0]
            self.rot = rotation_matrix(width, sp.angle_deg)
            self.ell_weights = _ellipsoid_weights(width, sp.condition)
        elif kind in (POWER, LINEAR):
            self.weights = np.asarray([sp.weight for sp in specs])
            self.exponents = np.asarray([sp.exponent for sp in specs])
        elif kind == SQRT_SUM:
            self.weights = np.asarray([sp.weight for sp in specs])
        elif kind == CUSTOM:
            self.fns = [sp.fn for sp in specs]

    def view(self, rows: np.ndarray) -> _GroupView:
        return _GroupView(self, rows)


@dataclass(frozen=True)
class PartialPlan:
    """Precomputed re-evaluation plan for a fixed set of changed variables."""

    sf_ids: np.ndarray
    cost: float
    parts: tuple[_GroupView, ...]


class ProblemInstance:
    """A decomposable objective plus its interaction structure.

    Immutable after construction; safe to share across concurrent runs.
    Ledgers and subvalue caches are per-run and never shared.
    """

    def __init__(
        self,
        name: str,
        ell: int,
        subfunctions: list[SubfunctionSpec],
        vtr: float,
        init_range: tuple[float, float] = DEFAULT_INIT_RANGE,
        cost_denominator: str = "total-indices",
    ):
        if ell < 1:
            raise ValueError("dimension must be positive")
        if cost_denominator not in ("total-indices", "subfunction-count"):
            raise ValueError(f"unknown cost denominator {cost_denominator!r}")
        covered = np.zeros(ell, dtype=bool)
        for sp in subfunctions:
            idx = np.asarray(sp.indices)
            if idx.size == 0 or len(set(sp.indices)) != idx.size:
                raise ValueError(f"bad index set {sp.indices}")
            if idx.min() < 0 or idx.max() >= ell:
                raise ValueError(f"index set {sp.indices} out of range for ell={ell}")
            covered[idx] = True
        if not covered.all():
            raise ValueError("some variables appear in no subfunction")

        self.name = name
        self.ell = ell
        self.subfunctions = list(subfunctions)
        self.vtr = vtr
        self.vtr_direction = "at-most"
        self.init_range = (float(init_range[0]), float(init_range[1]))
        self.cost_denominator = cost_denominator
        self.num_subfunctions = len(subfunctions)

        self._index_counts = np.asarray(
            [len(sp.indices) for sp in subfunctions], dtype=float
        )
        total = float(self._index_counts.sum())
        denom = total if cost_denominator == "total-indices" else float(len(subfunctions))
        self._cost_units = self._index_counts / denom

        # Group subfunctions with identical shape so touched sets evaluate in
        # one vectorized call per group.
        buckets: dict[tuple, tuple[list[int], list[SubfunctionSpec]]] = {}
        for sf_id, sp in enumerate(subfunctions):
            if sp.kind == ELLIPSOID:
                key = (ELLIPSOID, len(sp.indices), sp.condition, sp.angle_deg)
            elif sp.kind in (POWER, LINEAR, ROSENBROCK):
                key = (sp.kind,)
            else:
                key = (sp.kind, sf_id)
            ids, sps = buckets.setdefault(key, ([], []))
            ids.append(sf_id)
            sps.append(sp)
        self._groups = [_Group(key[0], ids, sps) for key, (ids, sps) in buckets.items()]
        self._sf_group = np.empty(len(subfunctions), dtype=np.intp)
        self._sf_row = np.empty(len(subfunctions), dtype=np.intp)
        for g_id, grp in enumerate(self._groups):
            self._sf_group[grp.sf_ids] = g_id
            self._sf_row[grp.sf_ids] = np.arange(len(grp.sf_ids))
        self._full_views = [grp.view(np.arange(len(grp.sf_ids))) for grp in self._groups]

        touching: list[list[int]] = [[] for _ in range(ell)]
        for sf_id, sp in enumerate(subfunctions):
            for v in sp.indices:
                touching[v].append(sf_id)
        self._touching = [np.asarray(t, dtype=np.intp) for t in touching]

        self.rotation_cache: list[np.ndarray | None] = [
            self._groups[self._sf_group[i]].rot if subfunctions[i].kind == ELLIPSOID else None
            for i in range(len(subfunctions))
        ]

    # -- structure ---------------------------------------------------------

    def touched_by(self, changed) -> np.ndarray:
        """Sorted unique ids of subfunctions whose index sets meet ``changed``."""
        parts = [self._touching[int(v)] for v in changed]
        if not parts:
            return np.empty(0, dtype=np.intp)
        return np.unique(np.concatenate(parts))

    def partial_cost(self, sf_ids: np.ndarray) -> float:
        return float(self._cost_units[sf_ids].sum())

    def partial_plan(self, changed) -> PartialPlan:
        """Build a reusable plan to re-evaluate everything touched by ``changed``."""
        sf_ids = self.touched_by(changed)
        parts = []
        for g_id in np.unique(self._sf_group[sf_ids]):
            grp = self._groups[g_id]
            members = sf_ids[self._sf_group[sf_ids] == g_id]
            parts.append(grp.view(self._sf_row[members]))
        return PartialPlan(sf_ids, self.partial_cost(sf_ids), tuple(parts))

    def evaluate_plan(
        self, x: np.ndarray, plan: PartialPlan, cache: SubvalueCache, ledger: EvaluationLedger
    ) -> float:
        """Re-evaluate the subfunctions in ``plan`` against ``x``, update ``cache``."""
        ledger.charge(plan.cost)
        for part in plan.parts:
            cache.values[part.sf_ids] = part.evaluate(x)
        fitness = float(cache.values.sum())
        cache.fitness = fitness
        return fitness

    # -- evaluation --------------------------------------------------------

    def evaluate_full(
        self, x: np.ndarray, ledger: EvaluationLedger
    ) -> tuple[float, SubvalueCache]:
        """Evaluate all subfunctions; costs exactly 1.0."""
        ledger.charge(1.0)
        values = np.empty(self.num_subfunctions)
        for part in self._full_views:
            values[part.sf_ids] = part.evaluate(x)
        fitness = float(values.sum())
        return fitness, SubvalueCache(values, fitness)

    def evaluate_partial(
        self,
        x: np.ndarray,
        changed,
        cache: SubvalueCache,
        ledger: EvaluationLedger,
    ) -> float:
        """Re-evaluate only the subfunctions touched by the ``changed`` indices.

        ``cache`` must be consistent with ``x`` everywhere outside ``changed``;
        it is updated in place. Charges the accumulated fractional cost of the
        touched subfunctions.
        """
        plan = self.partial_plan(changed)
        return self.evaluate_plan(x, plan, cache, ledger)

    def true_vig(self) -> np.ndarray:
        """Ground-truth variable interaction graph as a symmetric boolean matrix."""
        adj = np.zeros((self.ell, self.ell), dtype=bool)
        for sp in self.subfunctions:
            idx = np.asarray(sp.indices)
            adj[np.ix_(idx, idx)] = True
        np.fill_diagonal(adj, False)
        return adj


# -- problem family builders ------------------------------------------------


def _singleton_powers(weights: np.ndarray, exponents: np.ndarray) -> list[SubfunctionSpec]:
    return [
        SubfunctionSpec((i,), POWER, weight=float(w), exponent=float(p))
        for i, (w, p) in enumerate(zip(weights, exponents))
    ]


def _quadratic_singletons(weights: np.ndarray) -> list[SubfunctionSpec]:
    return _singleton_powers(weights, np.full(len(weights), 2.0))


def _reb_blocks(
    ell: int,
    condition: float,
    angle: float,
    kappa: int,
    stride,
    alternating: bool = False,
    offset: int = 0,
) -> list[SubfunctionSpec]:
    """Blocks of ``kappa`` consecutive variables advancing by ``stride``.

    ``stride`` may be an int (0 means non-overlapping, i.e. stride = kappa) or
    a callable block_index -> stride for mixed-stride variants. The blocks
    must tile [offset, ell) exactly.
    """
    if kappa < 1:
        raise ValueError("block size must be positive")
    if kappa > ell - offset:
        raise ValueError(f"ell={ell} too small for block size {kappa}")
    stride_of = stride if callable(stride) else lambda i: (stride or kappa)
    blocks = []
    start = offset
    i = 0
    while start + kappa <= ell:
        blocks.append(tuple(range(start, start + kappa)))
        start += stride_of(i)
        i += 1
    if blocks[-1][-1] != ell - 1:
        raise ValueError(
            f"ell={ell} incompatible with block size {kappa} and the given stride"
        )
    specs = []
    for b_id, idx in enumerate(blocks):
        if alternating:
            c, th = (1.0, 5.0) if b_id % 2 == 0 else (6.0, 45.0)
        else:
            c, th = condition, angle
        specs.append(SubfunctionSpec(idx, ELLIPSOID, condition=c, angle_deg=th))
    return specs


def _grid_blocks(ell: int) -> list[SubfunctionSpec]:
    side = math.isqrt(ell)
    if side * side != ell:
        raise ValueError(f"grid problem requires a square dimension, got ell={ell}")
    specs = []
    for v in range(ell):
        r, c = divmod(v, side)
        block = {v}
        if r > 0:
            block.add(v - side)
        if r < side - 1:
            block.add(v + side)
        if c > 0:
            block.add(v - 1)
        if c < side - 1:
            block.add(v + 1)
        specs.append(
            SubfunctionSpec(tuple(sorted(block)), ELLIPSOID, condition=6.0, angle_deg=45.0)
        )
    return specs


def _ridge_specs(ell: int, sharp: bool) -> list[SubfunctionSpec]:
    # Ridge axis is variable 0; it is excluded from the quadratic/norm term so
    # the function is unbounded below and the -1e10 target is reachable.
    specs = [SubfunctionSpec((0,), LINEAR, weight=-1.0)]
    if ell > 1:
        rest = tuple(range(1, ell))
        if sharp:
            specs.append(SubfunctionSpec(rest, SQRT_SUM, weight=100.0))
        else:
            specs.extend(
                SubfunctionSpec((i,), POWER, weight=100.0, exponent=2.0) for i in rest
            )
    return specs


def _alt_pair_stride(i: int) -> int:
    return 4 if i % 2 == 0 else 5


_REB_VARIANTS: dict[str, dict] = {
    "reb2weak": dict(condition=1.0, angle=5.0, kappa=2, stride=1),
    "reb2strong": dict(condition=6.0, angle=5.0, kappa=2, stride=1),
    "reb2alternating": dict(condition=0.0, angle=0.0, kappa=2, stride=1, alternating=True),
    "reb5nooverlap": dict(condition=6.0, angle=45.0, kappa=5, stride=0),
    "reb5smalloverlap": dict(condition=6.0, angle=45.0, kappa=5, stride=1),
    "reb5largeoverlap": dict(condition=6.0, angle=45.0, kappa=5, stride=4),
    "reb5alternating": dict(condition=0.0, angle=0.0, kappa=5, stride=4, alternating=True),
    "reb5disjointpairs": dict(condition=6.0, angle=45.0, kappa=5, stride=_alt_pair_stride),
    "reb10nooverlap": dict(condition=6.0, angle=45.0, kappa=10, stride=0),
    "reb10smalloverlap": dict(condition=6.0, angle=45.0, kappa=10, stride=1),
    "reb10largeoverlap": dict(condition=6.0, angle=45.0, kappa=10, stride=4),
    "reb10alternating": dict(condition=0.0, angle=0.0, kappa=10, stride=4, alternating=True),
}

PROBLEM_NAMES = (
    "sphere",
    "rotated-ellipsoid",
    "cigar",
    "tablet",
    "cigar-tablet",
    "two-axes",
    "different-powers",
    "rosenbrock",
    "parabolic-ridge",
    "sharp-ridge",
    "soreb",
    *sorted(_REB_VARIANTS),
    "osoreb",
    "rebgrid",
)


def _pop_param(params: dict, key: str, default):
    return params.pop(key, default)


def make_problem(
    name: str,
    ell: int,
    params: dict | None = None,
    *,
    cost_denominator: str = "total-indices",
) -> ProblemInstance:
    """Construct a benchmark problem by name.

    Args:
        name: one of ``PROBLEM_NAMES`` (case-insensitive, ``_``/``-`` both accepted).
        ell: number of variables.
        params: family-specific parameters. All families accept
            ``init_range=(lo, hi)`` and ``vtr``; ``rotated-ellipsoid`` accepts
            ``condition`` and ``angle``; ``soreb`` takes ``kappa``; ``osoreb``
            takes ``offset`` (start of its second block overlay, default 0).
        cost_denominator: ``total-indices`` charges a partial evaluation of a
            subfunction as |indices| / sum over all subfunctions' sizes (one
            non-overlapping sweep then costs exactly 1.0); the literal
            ``subfunction-count`` variant divides by the number of
            subfunctions instead.
    """
    params = dict(params or {})
    key = name.strip().lower().replace("_", "-")
    init_range = _pop_param(params, "init_range", DEFAULT_INIT_RANGE)
    vtr_default = -1e10 if key in ("parabolic-ridge", "sharp-ridge") else 1e-10
    vtr = float(_pop_param(params, "vtr", vtr_default))

    if key == "sphere":
        specs = _quadratic_singletons(np.ones(ell))
    elif key == "cigar":
        w = np.full(ell, 1e6)
        w[0] = 1.0
        specs = _quadratic_singletons(w)
    elif key == "tablet":
        w = np.ones(ell)
        w[0] = 1e6
        specs = _quadratic_singletons(w)
    elif key == "cigar-tablet":
        w = np.zeros(ell)
        w[0] += 1.0
        w[1 : ell - 1] += 1e4
        w[ell - 1] += 1e8
        specs = _quadratic_singletons(w)
    elif key == "two-axes":
        w = np.zeros(ell)
        half = ell // 2
        w[:half] += 1e6
        w[max(0, half - 1) :] += 1.0
        specs = _quadratic_singletons(w)
    elif key == "different-powers":
        p = 2.0 + (10.0 * np.arange(ell) / (ell - 1) if ell > 1 else np.zeros(1))
        specs = _singleton_powers(np.ones(ell), p)
    elif key == "rosenbrock":
        if ell < 2:
            raise ValueError("rosenbrock requires at least 2 variables")
        specs = [SubfunctionSpec((i, i + 1), ROSENBROCK) for i in range(ell - 1)]
    elif key == "parabolic-ridge":
        specs = _ridge_specs(ell, sharp=False)
    elif key == "sharp-ridge":
        specs = _ridge_specs(ell, sharp=True)
    elif key == "rotated-ellipsoid":
        c = float(_pop_param(params, "condition", 6.0))
        th = float(_pop_param(params, "angle", 45.0))
        specs = [SubfunctionSpec(tuple(range(ell)), ELLIPSOID, condition=c, angle_deg=th)]
    elif key == "soreb":
        kappa = int(_pop_param(params, "kappa", 5))
        specs = _reb_blocks(ell, 6.0, 45.0, kappa, stride=0)
    elif key in _REB_VARIANTS:
        specs = _reb_blocks(ell, **_REB_VARIANTS[key])
    elif key == "osoreb":
        offset = int(_pop_param(params, "offset", 0))
        specs = _reb_blocks(ell, 6.0, 45.0, 5, stride=4)
        specs += _reb_blocks(ell, 6.0, 45.0, 2, stride=5, offset=offset)
    elif key == "rebgrid":
        specs = _grid_blocks(ell)
    else:
        raise ValueError(f"unknown problem {name!r}")

    if params:
        raise ValueError(f"unknown parameters for {key}: {sorted(params)}")
    return ProblemInstance(
        key, ell, specs, vtr, init_range=init_range, cost_denominator=cost_denominator
    )


def _from_callable(
    fn: Callable[[np.ndarray], float],
    ell: int,
    init_range: tuple[float, float],
    vtr: float = -math.inf,
    name: str = "callable",
) -> ProblemInstance:
    """Internal: wrap a black-box callable as a single-subfunction problem.

    Not part of the public problem registry; used by the meta-tuning layer to
    point the optimizer at auxiliary objectives.
    """
    spec = SubfunctionSpec(tuple(range(ell)), CUSTOM, fn=fn)
    return ProblemInstance(name, ell, [spec], vtr, init_range=init_range)
