"""Domain types and small numerical helpers used across the package."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DomainError

# |gamma| below this uses the log / exponential limit everywhere.
GAMMA_EPS = 1e-8

# Relative slack when comparing cumulative weights against a quantile level;
# absorbs summation rounding exactly at an atom of the step CDF.
_LEVEL_RTOL = 1e-12


@dataclass(frozen=True)
class Dataset:
    """Positive response ``y`` with an ``n x p`` covariate matrix ``x``."""

    y: np.ndarray
    x: np.ndarray
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.shape[0] != y.shape[0]:
            raise DataError(f"x has {x.shape[0]} rows but y has {y.shape[0]}")
        if y.shape[0] < 8:
            raise DataError("at least 8 observations are required")
        if not np.all(np.isfinite(y)) or np.any(y <= 0):
            raise DataError("responses must be finite and strictly positive")
        if not np.all(np.isfinite(x)):
            raise DataError("covariates contain missing or non-finite entries")
        names = tuple(self.names) if self.names else tuple(f"x{j + 1}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise DataError(f"{len(names)} names for {x.shape[1]} covariates")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def subset(self, columns) -> "Dataset":
        columns = list(columns)
        return Dataset(self.y, self.x[:, columns], tuple(self.names[c] for c in columns))


def check_k(k: int, n: int) -> int:
    """Validate an intermediate order: integer with 1 < k < n/4."""
    if int(k) != k:
        raise DomainError(f"k must be an integer, got {k}")
    k = int(k)
    if not (1 < k and 4 * k < n):
        raise DomainError(f"k={k} must satisfy 1 < k < n/4 with n={n}")
    return k


def check_h(h: float) -> float:
    h = float(h)
    if not h > 0 or not math.isfinite(h):
        raise DomainError(f"bandwidth must be positive, got {h}")
    return h


def level(t: float) -> float:
    """Quantile level 1 - 1/t for a return period t > 1."""
    if not t > 1:
        raise DomainError(f"return period t must exceed 1, got {t}")
    return 1.0 - 1.0 / t


def weighted_quantile_index(cumw: np.ndarray, tau: float) -> np.ndarray:
    """Position of the first cumulative weight reaching ``tau`` of the total.

    ``cumw`` holds cumulative weights along the last axis, in ascending order
    of the response.  The total is read from the last entry so that appending
    zero weights never changes a result.
    """
    total = cumw[..., -1:]
    hit = cumw >= tau * total * (1.0 - _LEVEL_RTOL)
    return np.argmax(hit, axis=-1)


def empirical_quantile(sample, t: float) -> float:
    """Inf-type sample quantile: the ceil(n (1 - 1/t))-th order statistic."""
    s = np.sort(np.asarray(sample, dtype=float).reshape(-1), kind="stable")
    if s.size == 0:
        raise DomainError("empirical_quantile needs a nonempty sample")
    tau = level(t)
    cumw = np.cumsum(np.ones_like(s))
    return float(s[weighted_quantile_index(cumw, tau)])


def rank_transform(column) -> np.ndarray:
    """Empirical CDF transform: rank/n, where rank counts entries <= the value.

    Tied entries share the largest rank of their group, so ``(5, 5)`` maps to
    ``(1, 1)``.
    """
    c = np.asarray(column, dtype=float).reshape(-1)
    if c.size == 0:
        raise DomainError("rank_transform needs a nonempty column")
    s = np.sort(c, kind="stable")
    return np.searchsorted(s, c, side="right") / c.size


def rank_transform_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.column_stack([rank_transform(x[:, j]) for j in range(x.shape[1])])


def l_gamma(t, gamma):
    """L_gamma(t) = (t^gamma - 1)/gamma, with log(t) as the gamma -> 0 limit."""
    t = np.asarray(t, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if np.any(t <= 0):
        raise DomainError("l_gamma requires t > 0")
    small = np.abs(gamma) <= GAMMA_EPS
    g = np.where(small, 1.0, gamma)
    out = np.where(small, np.log(t), np.expm1(g * np.log(t)) / g)
    return float(out) if out.ndim == 0 else out
