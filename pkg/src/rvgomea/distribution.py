"""Per-linkage-set Gaussian models: estimation, incremental updates, sampling.

Each linkage set owns a mean and covariance over its involved variables, a
distribution multiplier (adaptive variance scaling), and an anticipated mean
shift. Covariances can be re-estimated from scratch every generation or
blended incrementally with the previous generation's matrix; when the linkage
structure changes between generations, covariance information is transferred
greedily from the old models before blending.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .linkage import FosElement

__all__ = [
    "LearningRates",
    "SamplingModel",
    "learning_rate",
    "ml_estimate",
    "incremental_update",
    "transfer_covariance",
    "update_model",
    "update_multiplier",
    "apply_ams",
    "cholesky_lower",
    "DEFAULT_COV_ALPHAS",
    "DEFAULT_AMS_ALPHAS",
    "MULTIPLIER_INCREASE",
    "MULTIPLIER_DECREASE_CLASSIC",
    "MULTIPLIER_DECREASE_ASYMMETRIC",
    "SDR_THRESHOLD",
]

# Default learning-rate coefficients, regressed over the standard benchmark set.
DEFAULT_COV_ALPHAS = (-1.01, 1.32, 1.94)
DEFAULT_AMS_ALPHAS = (-2.95, 0.47, 0.87)

MULTIPLIER_INCREASE = 1.0 / 0.9
MULTIPLIER_DECREASE_CLASSIC = 0.9
MULTIPLIER_DECREASE_ASYMMETRIC = 0.95
SDR_THRESHOLD = 1.0

_PIVOT_MIN = 1e-300


def learning_rate(
    alphas: tuple[float, float, float], selection_size: int, kappa: int
) -> float:
    """Learning rate 1 - exp(a0 * |S|^a1 / kappa^a2), clamped to [0, 1]."""
    if selection_size < 1 or kappa < 1:
        raise ValueError("selection size and linkage size must be positive")
    a0, a1, a2 = alphas
    eta = 1.0 - math.exp(a0 * selection_size**a1 / kappa**a2)
    return min(1.0, max(0.0, eta))


@dataclass
class LearningRates:
    eta_cov: float
    eta_ams: float

    def __post_init__(self):
        for eta in (self.eta_cov, self.eta_ams):
            if not 0.0 <= eta <= 1.0:
                raise ValueError("learning rates must lie in [0, 1]")


def ml_estimate(
    selection: np.ndarray, involved
) -> tuple[np.ndarray, np.ndarray]:
    """Maximum-likelihood mean and covariance of selected rows over ``involved``.

    Covariance normalizes by the number of samples (not n-1).
    """
    x = np.asarray(selection, dtype=float)[:, list(involved)]
    n = x.shape[0]
    mean = x.mean(axis=0)
    dev = x - mean
    cov = dev.T @ dev / n
    cov = 0.5 * (cov + cov.T)
    return mean, cov


def incremental_update(prev, fresh, eta: float):
    """Exponential blend (1 - eta) * prev + eta * fresh, elementwise."""
    return (1.0 - eta) * np.asarray(prev) + eta * np.asarray(fresh)


def cholesky_lower(a: np.ndarray) -> np.ndarray | None:
    """Lower Cholesky factor, or None when a pivot is non-positive or tiny.

    No jitter: a failed factorization is reported to the caller, which falls
    back to univariate sampling.
    """
    n = a.shape[0]
    low = np.zeros_like(a, dtype=float)
    for j in range(n):
        pivot = a[j, j] - low[j, :j] @ low[j, :j]
        if not pivot > _PIVOT_MIN:
            return None
        low[j, j] = math.sqrt(pivot)
        if j + 1 < n:
            low[j + 1 :, j] = (a[j + 1 :, j] - low[j + 1 :, :j] @ low[j, :j]) / low[j, j]
    return low


class SamplingModel:
    """Gaussian state for one linkage set.

    The covariance spans all involved variables (sampled plus conditioning);
    the mean shift only spans the sampled ones. ``prepare`` must be called
    after any change to ``cov`` or ``c_mult`` and before sampling.
    """

    def __init__(self, element: FosElement, mean: np.ndarray, cov: np.ndarray):
        self.element = element
        self.involved: tuple[int, ...] = element.involved
        pos = {v: k for k, v in enumerate(self.involved)}
        self.i0_local = np.asarray([pos[v] for v in sorted(element.sampled)], dtype=np.intp)
        self.i1_local = np.asarray(
            [pos[v] for v in sorted(element.conditioned_on)], dtype=np.intp
        )
        self.i0_global = np.asarray(sorted(element.sampled), dtype=np.intp)
        self.i1_global = np.asarray(sorted(element.conditioned_on), dtype=np.intp)
        self.mean = np.asarray(mean, dtype=float)
        self.cov = np.asarray(cov, dtype=float)
        self.c_mult = 1.0
        self.ams_shift = np.zeros(len(self.i0_local))
        self.fallback = False
        self._gain: np.ndarray | None = None
        self._factor: np.ndarray | None = None
        self._fallback_std: np.ndarray | None = None
        self._grid00 = np.ix_(self.i0_local, self.i0_local)
        self._grid11 = np.ix_(self.i1_local, self.i1_local)
        self._grid01 = np.ix_(self.i0_local, self.i1_local)

    @property
    def conditional(self) -> bool:
        return len(self.i1_local) > 0

    def prepare(self) -> bool:
        """(Re)factor the scaled sampling covariance; returns True on fallback."""
        s00 = self.cov[self._grid00]
        self._gain = None
        self.fallback = False
        cond = s00
        if self.conditional:
            s11 = self.cov[self._grid11]
            s01 = self.cov[self._grid01]
            l11 = cholesky_lower(s11)
            if l11 is None:
                self.fallback = True
            else:
                half = solve_triangular(l11, s01.T, lower=True)
                self._gain = solve_triangular(l11.T, half, lower=False).T
                cond = s00 - self._gain @ s01.T
                cond = 0.5 * (cond + cond.T)
        if not self.fallback:
            self._factor = cholesky_lower(self.c_mult * cond)
            if self._factor is None:
                self.fallback = True
        if self.fallback:
            self._gain = None
            self._factor = None
            var = np.clip(np.diag(s00), 0.0, None)
            self._fallback_std = np.sqrt(self.c_mult * var)
        return self.fallback

    def conditional_mean(self, conditioning: np.ndarray) -> np.ndarray:
        """Mean of the sampled block given values of the conditioning block.

        ``conditioning`` may be a single vector or a batch of rows.
        """
        mean0 = self.mean[self.i0_local]
        if not self.conditional or self._gain is None:
            if conditioning is not None and np.ndim(conditioning) == 2:
                return np.broadcast_to(mean0, (len(conditioning), len(mean0)))
            return mean0
        innov = np.asarray(conditioning) - self.mean[self.i1_local]
        return mean0 + innov @ self._gain.T

    def sample(
        self,
        rng: np.random.Generator,
        conditioning: np.ndarray | None = None,
        size: int | None = None,
    ) -> np.ndarray:
        """Draw values for the sampled block from the scaled (conditional) Gaussian.

        On a failed factorization the draw degrades to independent normals
        with the per-variable marginal variances.
        """
        k0 = len(self.i0_local)
        n = 1 if size is None else size
        z = rng.standard_normal((n, k0))
        if self.fallback:
            out = self.mean[self.i0_local] + z * self._fallback_std
        else:
            center = self.conditional_mean(conditioning) if self.conditional else self.mean[self.i0_local]
            out = center + z @ self._factor.T
        return out[0] if size is None else out

    def sdr(self, improved_mean: np.ndarray) -> float:
        """Largest principal-axis distance of improvements from the model mean.

        Measured in standard deviations of the scaled sampling distribution.
        """
        diff = np.asarray(improved_mean) - self.mean[self.i0_local]
        if self.fallback:
            std = self._fallback_std
            with np.errstate(divide="ignore", invalid="ignore"):
                z = np.where(std > 0, diff / np.where(std > 0, std, 1.0), np.where(diff == 0, 0.0, math.inf))
            return float(np.max(np.abs(z))) if len(z) else 0.0
        z = solve_triangular(self._factor, diff, lower=True)
        return float(np.max(np.abs(z))) if len(z) else 0.0


def transfer_covariance(
    prev_models: list[SamplingModel],
    element: FosElement,
    selection: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Seed covariance for a new linkage set from the previous generation's models.

    If a previous model covers exactly the same variables, its covariance is
    reused as-is. Otherwise previous models whose variable sets are strict
    subsets of the not-yet-covered variables are merged greedily, largest
    first (ties broken uniformly at random); variables no model covers get
    maximum-likelihood variances on the diagonal and zero covariances.
    """
    involved = element.involved
    for pm in prev_models:
        if pm.involved == involved:
            return pm.cov.copy()
    m = len(involved)
    pos = {v: k for k, v in enumerate(involved)}
    seed = np.zeros((m, m))
    remaining = set(involved)
    pool = list(prev_models)
    while remaining and pool:
        cands = [pm for pm in pool if set(pm.involved) < remaining]
        if not cands:
            break
        top = max(len(pm.involved) for pm in cands)
        ties = [pm for pm in cands if len(pm.involved) == top]
        pick = ties[rng.integers(len(ties))] if len(ties) > 1 else ties[0]
        rows = np.asarray([pos[v] for v in pick.involved], dtype=np.intp)
        seed[np.ix_(rows, rows)] = pick.cov
        remaining -= set(pick.involved)
        pool.remove(pick)
    if remaining:
        residual = sorted(remaining)
        _, diag_cov = ml_estimate(selection, residual)
        for k, v in enumerate(residual):
            seed[pos[v], pos[v]] = diag_cov[k, k]
    return seed


def update_model(
    model: SamplingModel,
    selection: np.ndarray,
    mean_delta_full: np.ndarray,
    rates: LearningRates,
    mode: str,
    cov_base: np.ndarray | None = None,
) -> SamplingModel:
    """Refresh a model from the current selection.

    ``full-reestimate`` replaces mean/covariance with maximum-likelihood
    estimates and takes the raw selection-mean shift; ``incremental`` blends
    covariance and mean shift with the previous state at the given rates.
    ``mean_delta_full`` is the full-dimensional selection-mean shift; only the
    sampled variables' entries are used. ``cov_base`` overrides the blend
    base (used after a covariance transfer when the linkage changed).
    """
    mean, cov_ml = ml_estimate(selection, model.involved)
    delta = np.asarray(mean_delta_full)[model.i0_global]
    if mode == "full-reestimate":
        model.cov = cov_ml
        model.ams_shift = delta.copy()
    elif mode == "incremental":
        base = model.cov if cov_base is None else cov_base
        model.cov = incremental_update(base, cov_ml, rates.eta_cov)
        model.ams_shift = incremental_update(model.ams_shift, delta, rates.eta_ams)
    else:
        raise ValueError(f"unknown update mode {mode!r}")
    model.mean = mean
    return model


def update_multiplier(
    model: SamplingModel,
    improved: bool,
    sdr: float,
    nis: int,
    nis_max: int,
    decrease: float = MULTIPLIER_DECREASE_CLASSIC,
) -> SamplingModel:
    """Adaptive variance scaling for one linkage set.

    Improvements beyond one standard deviation inflate the multiplier; a pass
    without improvements deflates it. The multiplier may only drop below 1
    once the no-improvement stretch has exceeded its cap.
    """
    if improved and sdr > SDR_THRESHOLD:
        model.c_mult *= MULTIPLIER_INCREASE
    elif not improved:
        model.c_mult *= decrease
    if nis < nis_max:
        model.c_mult = max(1.0, model.c_mult)
    return model


def apply_ams(coords: np.ndarray, model: SamplingModel, delta_ams: float) -> np.ndarray:
    """Shift sampled-block coordinates along the anticipated mean shift."""
    return np.asarray(coords) + delta_ams * model.c_mult * model.ams_shift
