"""Kernel weights and the kernel estimators of the conditional CDF and quantile.

The conditional CDF at ``x0`` is the kernel-weighted proportion of responses
``Y_i <= y``.  The conditional quantile at return period ``t`` is the smallest
observed response at which that proportion reaches ``1 - 1/t``.  Both accept a
univariate covariate (screening path, scalar index) or a matrix of covariates,
in which case a product kernel with a common bandwidth is used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import check_h, level, weighted_quantile_index
from .errors import DomainError, EmptyNeighborhood

__all__ = [
    "KernelSpec",
    "EPANECHNIKOV",
    "GAUSSIAN",
    "kernel_weight",
    "KernelConditional",
    "conditional_cdf",
    "conditional_quantile",
    "loo_conditional_quantile",
]

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

# Cap on the number of matrix cells materialized at once by batched queries.
_CHUNK_CELLS = 4_000_000
_BANDED_MAX_FRACTION = 0.4


@dataclass(frozen=True)
class KernelSpec:
    family: str = "epanechnikov"

    def __post_init__(self):
        if self.family not in ("epanechnikov", "gaussian"):
            raise DomainError(f"unknown kernel family {self.family!r}")

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if self.family == "epanechnikov":
            return 0.75 * np.maximum(0.0, 1.0 - u * u)
        return _INV_SQRT_2PI * np.exp(-0.5 * u * u)

    @property
    def compact(self) -> bool:
        return self.family == "epanechnikov"


EPANECHNIKOV = KernelSpec("epanechnikov")
GAUSSIAN = KernelSpec("gaussian")


def kernel_weight(spec: KernelSpec, u):
    w = spec(u)
    return float(w) if np.ndim(w) == 0 else w


def _as_2d(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, 1) if x.ndim <= 1 else x


class KernelConditional:
    """Kernel conditional CDF / quantile evaluator over fixed data.

    Responses are sorted once; every query forms the kernel weights in that
    order and scans their running sum, so a quantile costs O(n) after the
    initial sort.  Instances are immutable after construction.
    """

    def __init__(self, x, y, spec: KernelSpec = EPANECHNIKOV, h: float = 0.1):
        y = np.asarray(y, dtype=float).reshape(-1)
        x = _as_2d(x)
        if x.shape[0] != y.shape[0]:
            raise DomainError("x and y lengths differ")
        self.h = check_h(h)
        self.spec = spec
        self.order = np.argsort(y, kind="stable")
        self.y_sorted = y[self.order]
        self.x_sorted = x[self.order]
        self.position = np.empty_like(self.order)
        self.position[self.order] = np.arange(y.size)
        self.n = y.size
        self._banded = spec.compact and x.shape[1] == 1
        if self._banded:
            by_x = np.argsort(x[:, 0], kind="stable")
            self._x_by_x = x[by_x, 0]
            self._rank_by_x = self.position[by_x]
            self._x_flat = np.ascontiguousarray(self.x_sorted[:, 0])

    def weights(self, points) -> np.ndarray:
        """Kernel weights, shape (m, n), columns in ascending-response order."""
        pts = _as_2d(points)
        if pts.shape[1] != self.x_sorted.shape[1]:
            raise DomainError("query dimension does not match covariates")
        w = self.spec((self.x_sorted[None, :, 0] - pts[:, 0:1]) / self.h)
        for d in range(1, pts.shape[1]):
            w = w * self.spec((self.x_sorted[None, :, d] - pts[:, d : d + 1]) / self.h)
        return w

    def cdf(self, x0, y0: float) -> float:
        w = self.weights(np.atleast_1d(np.asarray(x0, dtype=float))[None, :])[0]
        cumw = np.cumsum(w)
        if cumw[-1] <= 0:
            raise EmptyNeighborhood(f"no positive kernel weight at x0={x0}")
        m = np.searchsorted(self.y_sorted, y0, side="right")
        return 0.0 if m == 0 else float(cumw[m - 1] / cumw[-1])

    def quantiles(self, points, ts, loo=None) -> np.ndarray:
        """Conditional quantiles at every point for every return period.

        Returns an array of shape (m, len(ts)); rows with no positive weight
        are NaN.  ``loo`` optionally gives, per point, an observation index
        whose weight is removed (negative entries remove nothing).
        """
        pts = _as_2d(points)
        taus = [level(t) for t in np.atleast_1d(ts)]
        out = np.full((pts.shape[0], len(taus)), np.nan)
        if loo is not None:
            loo = np.asarray(loo, dtype=int).reshape(-1)
            if loo.shape[0] != pts.shape[0]:
                raise DomainError("loo must give one index per query point")
        banded = False
        if self._banded:
            width = self._window_bounds(pts[:, 0])[2]
            # Sorting wide windows costs more than the dense scan.
            banded = width.max(initial=0) <= _BANDED_MAX_FRACTION * self.n
        if banded:
            step = max(1, _CHUNK_CELLS // max(int(width.max(initial=1)), 1))
        else:
            step = max(1, _CHUNK_CELLS // max(self.n, 1))
        for start in range(0, pts.shape[0], step):
            stop = min(start + step, pts.shape[0])
            drop = None if loo is None else loo[start:stop]
            if banded:
                ranks, w = self._banded_weights(pts[start:stop, 0])
            else:
                ranks, w = None, self.weights(pts[start:stop])
            if drop is not None:
                keep = drop >= 0
                target = np.where(keep, self.position[np.maximum(drop, 0)], -1)
                if ranks is None:
                    rows = np.arange(stop - start)
                    w[rows[keep], target[keep]] = 0.0
                else:
                    w[ranks == target[:, None]] = 0.0
            if w.shape[1] == 0:
                continue
            cumw = np.cumsum(w, axis=1)
            ok = cumw[:, -1] > 0
            for c, tau in enumerate(taus):
                idx = weighted_quantile_index(cumw[ok], tau)
                if ranks is not None:
                    idx = ranks[ok][np.arange(idx.size), idx]
                out[start:stop][ok, c] = self.y_sorted[idx]
        return out

    def _window_bounds(self, p):
        lo = np.searchsorted(self._x_by_x, p - self.h, side="left")
        hi = np.searchsorted(self._x_by_x, p + self.h, side="right")
        return lo, hi, hi - lo

    def _banded_weights(self, p):
        # Restrict each row to covariates within h of the query and order the
        # window by global response rank: the running sums then match the full
        # n-column computation exactly, since skipped entries only add zeros.
        lo, _, width = self._window_bounds(p)
        span = np.arange(int(width.max(initial=0)))
        valid = span[None, :] < width[:, None]
        idx = np.minimum(lo[:, None] + span[None, :], self.n - 1)
        ranks = np.where(valid, self._rank_by_x[idx], self.n)
        ranks.sort(axis=1)
        valid = ranks < self.n
        ranks[~valid] = 0
        w = self.spec((np.take(self._x_flat, ranks) - p[:, None]) / self.h)
        w *= valid
        return ranks, w

    def quantile(self, x0, t: float) -> float:
        q = self.quantiles(np.atleast_1d(np.asarray(x0, dtype=float))[None, :], [t])[0, 0]
        if np.isnan(q):
            raise EmptyNeighborhood(f"no positive kernel weight at x0={x0}")
        return float(q)


def conditional_cdf(x, y, x0, y0: float, spec: KernelSpec = EPANECHNIKOV, h: float = 0.1) -> float:
    return KernelConditional(x, y, spec, h).cdf(x0, y0)


def conditional_quantile(x, y, x0, t: float, spec: KernelSpec = EPANECHNIKOV, h: float = 0.1) -> float:
    """inf{y : F(y | x0) >= 1 - 1/t} for the kernel conditional CDF."""
    return KernelConditional(x, y, spec, h).quantile(x0, t)


def loo_conditional_quantile(x, y, i: int, t: float, spec: KernelSpec = EPANECHNIKOV, h: float = 0.1) -> float:
    """Conditional quantile at ``X_i`` computed without observation ``i``."""
    xx = _as_2d(x)
    if xx.shape[0] < 2:
        raise DomainError("leave-one-out needs at least two observations")
    est = KernelConditional(xx, y, spec, h)
    q = est.quantiles(xx[i : i + 1], [t], loo=[i])[0, 0]
    if np.isnan(q):
        raise EmptyNeighborhood(f"no positive kernel weight at X_{i} after deletion")
    return float(q)
