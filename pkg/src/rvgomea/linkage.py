"""Variable dependency discovery and linkage-set construction.

Pairwise non-additivity tests fill a dependency strength matrix (DSM), the
DSM is thresholded into a variable interaction graph (VIG), and greedy
maximal-clique searches turn the VIG into a set of (possibly conditional)
linkage sets. Static constructors for the usual fixed models live here too.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .problems import EvaluationLedger, ProblemInstance, SubvalueCache

__all__ = [
    "Dsm",
    "Vig",
    "FosElement",
    "LinkageModel",
    "dependency_test",
    "update_dsm_incremental",
    "build_vig",
    "clique_seeding",
    "static_model",
    "export_vig",
    "export_linkage",
    "DEFAULT_EDGE_THRESHOLD",
]

DEFAULT_EDGE_THRESHOLD = 1e-6
_DENOM_GUARD = 1e-300


@dataclass
class Dsm:
    """Symmetric pairwise dependency strengths in [0, 1], zero diagonal.

    Untested pairs report strength 0 and tested=False until measured.
    """

    strengths: np.ndarray
    tested: np.ndarray

    @classmethod
    def empty(cls, ell: int) -> "Dsm":
        return cls(np.zeros((ell, ell)), np.zeros((ell, ell), dtype=bool))

    @property
    def ell(self) -> int:
        return self.strengths.shape[0]

    def untested_pairs(self) -> np.ndarray:
        """Upper-triangle (i, j) pairs not yet measured, ordered by (i, j)."""
        mask = ~self.tested & np.triu(np.ones_like(self.tested), k=1)
        return np.argwhere(mask)

    @property
    def fully_tested(self) -> bool:
        return len(self.untested_pairs()) == 0


@dataclass
class Vig:
    """Undirected interaction graph, stored as a symmetric boolean matrix."""

    adjacency: np.ndarray
    threshold: float = DEFAULT_EDGE_THRESHOLD

    @property
    def ell(self) -> int:
        return self.adjacency.shape[0]

    def neighbors(self, v: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[v])


@dataclass(frozen=True)
class FosElement:
    """A linkage set: variables sampled jointly, optionally conditioned.

    ``sampled`` are the variables this element varies; ``conditioned_on`` are
    neighbor variables whose current values parameterize the conditional
    Gaussian (empty means unconditional). The two sets are disjoint.
    """

    sampled: tuple[int, ...]
    conditioned_on: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.sampled:
            raise ValueError("a linkage set must sample at least one variable")
        if set(self.sampled) & set(self.conditioned_on):
            raise ValueError("sampled and conditioning sets overlap")

    @property
    def involved(self) -> tuple[int, ...]:
        return tuple(sorted(set(self.sampled) | set(self.conditioned_on)))


@dataclass
class LinkageModel:
    elements: list[FosElement]
    origin: str = "static-univariate"

    def __post_init__(self):
        covered = set()
        for el in self.elements:
            covered.update(el.sampled)
        ell = max(covered, default=-1) + 1
        if covered != set(range(ell)):
            raise ValueError("linkage model does not cover all variables")

    @property
    def is_conditional(self) -> bool:
        return self.origin in ("static-conditional-true-vig", "fitness-based-online")


def dependency_test(
    problem: ProblemInstance,
    x: np.ndarray,
    i: int,
    j: int,
    ledger: EvaluationLedger,
    cache: SubvalueCache | None = None,
    gamma: float = 1.0,
) -> float:
    """Normalized non-additivity of coordinates ``i`` and ``j`` around ``x``.

    Second difference |f(x^{ij}) - f(x^i) - f(x^j) + f(x)| over the largest
    fitness magnitude among the four points, clamped to [0, 1]. Exact zero
    for pairs with no quadratic cross-term. The perturbation step is
    ``gamma`` times the initialization-range width; charging goes through
    partial evaluations of the touched subfunctions.

    Symmetric bit-for-bit: arguments are canonicalized to (min, max) so both
    orders run the identical schedule.
    """
    if i == j:
        raise ValueError("dependency test needs two distinct variables")
    lo_var, hi_var = (i, j) if i < j else (j, i)
    delta = gamma * (problem.init_range[1] - problem.init_range[0])

    base = np.asarray(x, dtype=float)
    if cache is None:
        f0, cache = problem.evaluate_full(base, ledger)
    else:
        f0 = cache.fitness

    xa = base.copy()
    xa[lo_var] += delta
    ca = cache.copy()
    fa = problem.evaluate_partial(xa, (lo_var,), ca, ledger)

    xb = base.copy()
    xb[hi_var] += delta
    cb = cache.copy()
    fb = problem.evaluate_partial(xb, (hi_var,), cb, ledger)

    xab = xa
    xab[hi_var] += delta
    fab = problem.evaluate_partial(xab, (hi_var,), ca, ledger)

    numer = abs(fab - fa - fb + f0)
    denom = _DENOM_GUARD + max(abs(fab), abs(fa), abs(fb), abs(f0))
    return min(1.0, numer / denom)


def update_dsm_incremental(
    dsm: Dsm,
    problem: ProblemInstance,
    x: np.ndarray,
    pair_budget: int,
    ledger: EvaluationLedger,
    rng: np.random.Generator,
    cache: SubvalueCache | None = None,
) -> Dsm:
    """Test up to ``pair_budget`` untested pairs, chosen uniformly at random.

    Already-tested entries are never touched; returns the same (mutated) DSM.
    """
    if pair_budget < 0:
        raise ValueError("pair budget must be non-negative")
    pairs = dsm.untested_pairs()
    if pair_budget == 0 or len(pairs) == 0:
        return dsm
    if pair_budget < len(pairs):
        chosen = pairs[rng.permutation(len(pairs))[:pair_budget]]
    else:
        chosen = pairs
    if cache is None:
        _, cache = problem.evaluate_full(np.asarray(x, dtype=float), ledger)
    for u, v in chosen:
        s = dependency_test(problem, x, int(u), int(v), ledger, cache=cache)
        dsm.strengths[u, v] = dsm.strengths[v, u] = s
        dsm.tested[u, v] = dsm.tested[v, u] = True
    return dsm


def build_vig(dsm: Dsm, d_min: float = DEFAULT_EDGE_THRESHOLD) -> Vig:
    """Threshold the DSM: edge (u, v) iff measured strength exceeds ``d_min``."""
    if d_min < 0:
        raise ValueError("threshold must be non-negative")
    adj = dsm.strengths > d_min
    np.fill_diagonal(adj, False)
    return Vig(adj, d_min)


def _greedy_clique(adj: np.ndarray, start: int) -> tuple[int, ...]:
    # Grow a maximal clique from `start`; candidates are admitted in
    # ascending index order and pruned to common neighbors after each step.
    clique = [start]
    cand = sorted(int(v) for v in np.flatnonzero(adj[start]))
    while cand:
        v = cand[0]
        clique.append(v)
        cand = [w for w in cand[1:] if adj[v, w]]
    return tuple(sorted(clique))


def clique_seeding(vig: Vig, origin: str = "fitness-based-online") -> LinkageModel:
    """Build conditional linkage sets from greedy maximal cliques of the VIG.

    One clique search starts from every vertex; duplicates are dropped. Each
    clique samples its members conditioned on all outside neighbors.
    """
    adj = vig.adjacency
    elements: list[FosElement] = []
    seen: set[tuple[int, ...]] = set()
    for start in range(vig.ell):
        clique = _greedy_clique(adj, start)
        if clique in seen:
            continue
        seen.add(clique)
        ext = np.flatnonzero(adj[list(clique)].any(axis=0))
        cond = tuple(sorted(set(int(v) for v in ext) - set(clique)))
        elements.append(FosElement(clique, cond))
    return LinkageModel(elements, origin)


def static_model(
    kind: str, problem: ProblemInstance, kappa: int | None = None
) -> LinkageModel:
    """Fixed linkage models: univariate, marginal-product, full, or true-VIG cliques."""
    ell = problem.ell
    if kind == "univariate":
        els = [FosElement((i,)) for i in range(ell)]
        return LinkageModel(els, "static-univariate")
    if kind == "marginal-product":
        if kappa is None or kappa < 1:
            raise ValueError("marginal-product model needs a block size")
        if ell % kappa != 0:
            raise ValueError(f"ell={ell} not divisible by block size {kappa}")
        els = [
            FosElement(tuple(range(s, s + kappa))) for s in range(0, ell, kappa)
        ]
        return LinkageModel(els, "static-marginal-product")
    if kind == "full":
        return LinkageModel([FosElement(tuple(range(ell)))], "static-full")
    if kind == "conditional-true-vig":
        vig = Vig(problem.true_vig(), 0.0)
        return clique_seeding(vig, origin="static-conditional-true-vig")
    raise ValueError(f"unknown static linkage kind {kind!r}")


def export_vig(vig: Vig, path, dsm: Dsm | None = None) -> None:
    """Write the VIG as one ``u v strength`` line per edge."""
    with open(path, "w") as fh:
        for u in range(vig.ell):
            for v in range(u + 1, vig.ell):
                if vig.adjacency[u, v]:
                    s = dsm.strengths[u, v] if dsm is not None else 1.0
                    fh.write(f"{u} {v} {s!r}\n")


def export_linkage(model: LinkageModel, path) -> None:
    """Write one linkage set per line: sampled indices, '|', conditioning indices."""
    with open(path, "w") as fh:
        fh.write(f"# origin: {model.origin}\n")
        for el in model.elements:
            left = " ".join(map(str, el.sampled))
            right = " ".join(map(str, el.conditioned_on))
            fh.write(f"{left} | {right}\n".rstrip() + "\n")
