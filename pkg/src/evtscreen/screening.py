"""Marginal-utility screening of covariates by conditional Pickands curves.

For covariate ``j`` the utility is the average squared gap between the
conditional Pickands curve of Y given X^(j) and the unconditional estimate,
with one common ``(k, h)`` for every column so that utilities are comparable.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, check_h, check_k
from .errors import DomainError, UnstableUtility
from .evi import EviEstimate, pickands_curve, pickands_unconditional
from .kernels import EPANECHNIKOV, KernelSpec

__all__ = [
    "MAX_DEGENERATE_FRACTION",
    "ScreeningResult",
    "marginal_utility",
    "utility_from_curve",
    "rank_utilities",
    "screen",
    "active_set_threshold",
    "nested_set",
    "minimum_model_size",
]

MAX_DEGENERATE_FRACTION = 0.2


@dataclass(frozen=True)
class ScreeningResult:
    """Utilities in original column order plus the descending ranking.

    ``ranking`` holds 0-based column indices; flagged columns carry a NaN
    utility and sort last (they rank as -inf).
    """

    utilities: np.ndarray
    ranking: np.ndarray
    k: int
    h: float
    gamma0: EviEstimate
    names: tuple[str, ...] = ()
    flagged: dict[int, str] = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.utilities.shape[0]

    def nested_set(self, j: int) -> np.ndarray:
        return nested_set(self, j)

    def active_set_threshold(self, lam: float) -> np.ndarray:
        return active_set_threshold(self, lam)

    def ranked_names(self) -> list[str]:
        return [self.names[c] for c in self.ranking] if self.names else []


def _evaluation_points(xj: np.ndarray, spec: KernelSpec, h: float) -> np.ndarray:
    # Compact kernels are biased near the edge of [0, 1]; keep interior points only.
    if spec.compact:
        inside = xj[(xj >= h) & (xj <= 1.0 - h)]
        if inside.size:
            return inside
    return xj


def utility_from_curve(curve, gamma0: float, max_degenerate: float = MAX_DEGENERATE_FRACTION) -> float:
    """Mean squared deviation of finite curve values from ``gamma0``.

    NaN entries are degenerate evaluation points; they are skipped, but more
    than ``max_degenerate`` of them raises :class:`UnstableUtility`.
    """
    curve = np.asarray(curve, dtype=float).reshape(-1)
    if curve.size == 0:
        raise UnstableUtility("no evaluation points")
    good = np.isfinite(curve)
    bad_frac = 1.0 - good.mean()
    if bad_frac > max_degenerate:
        raise UnstableUtility(f"{bad_frac:.1%} of evaluation points are degenerate")
    return float(np.mean((curve[good] - gamma0) ** 2))


def marginal_utility(y, xj, k: int, spec: KernelSpec = EPANECHNIKOV, h: float = 0.1,
                     gamma0: float | None = None) -> float:
    """Utility of one (rank-transformed) covariate column."""
    y = np.asarray(y, dtype=float).reshape(-1)
    xj = np.asarray(xj, dtype=float).reshape(-1)
    check_k(k, y.size)
    h = check_h(h)
    if gamma0 is None:
        gamma0 = pickands_unconditional(y, k).gamma_hat
    pts = _evaluation_points(xj, spec, h)
    # Identical points give identical estimates; evaluate each value once.
    uniq, inverse = np.unique(pts, return_inverse=True)
    curve = pickands_curve(xj, y, uniq, k, spec, h)[inverse]
    return utility_from_curve(curve, gamma0)


def rank_utilities(utilities) -> np.ndarray:
    """Descending order, ties by ascending index, NaN (flagged) last."""
    u = np.asarray(utilities, dtype=float)
    key = np.where(np.isnan(u), -np.inf, u)
    return np.lexsort((np.arange(u.size), -key))


def screen(dataset: Dataset, k: int, spec: KernelSpec = EPANECHNIKOV, h: float = 0.1,
           n_jobs: int = 1) -> ScreeningResult:
    """Utilities for every column under a single ``(k, h)``.

    Columns are independent and may be computed on ``n_jobs`` threads; the
    result does not depend on the thread count.
    """
    check_k(k, dataset.n)
    h = check_h(h)
    gamma0 = pickands_unconditional(dataset.y, k)

    def one(j):
        try:
            return marginal_utility(dataset.y, dataset.x[:, j], k, spec, h, gamma0.gamma_hat), None
        except UnstableUtility as exc:
            return math.nan, str(exc)

    cols = range(dataset.p)
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            out = list(pool.map(one, cols))
    else:
        out = [one(j) for j in cols]
    utilities = np.array([u for u, _ in out], dtype=float)
    flagged = {j: msg for j, (_, msg) in enumerate(out) if msg is not None}
    return ScreeningResult(utilities, rank_utilities(utilities), int(k), h, gamma0,
                           dataset.names, flagged)


def active_set_threshold(result: ScreeningResult, lam: float) -> np.ndarray:
    """Columns whose utility strictly exceeds ``lam`` (ascending indices)."""
    if lam < 0:
        raise DomainError(f"lambda must be nonnegative, got {lam}")
    u = np.where(np.isnan(result.utilities), -np.inf, result.utilities)
    return np.flatnonzero(u > lam)


def nested_set(result: ScreeningResult, j: int) -> np.ndarray:
    """The ``j`` top-ranked columns, in rank order."""
    if not 1 <= j <= result.p:
        raise DomainError(f"model size {j} outside [1, {result.p}]")
    return result.ranking[:j].copy()


def minimum_model_size(ranking, active) -> int:
    """Smallest j such that the top-j ranked columns contain every active column."""
    ranking = np.asarray(ranking)
    pos = np.empty(ranking.size, dtype=int)
    pos[ranking] = np.arange(ranking.size)
    return int(pos[np.asarray(list(active), dtype=int)].max()) + 1
