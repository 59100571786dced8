"""Pickands estimators of the extreme value index and the auxiliary scale."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import GAMMA_EPS, check_k, empirical_quantile
from .errors import DegeneratePickands, DegenerateScale
from .kernels import EPANECHNIKOV, KernelConditional, KernelSpec

__all__ = [
    "GAMMA_CAP",
    "EviEstimate",
    "pickands_from_quantiles",
    "pickands_unconditional",
    "pickands_conditional",
    "pickands_curve",
    "marginal_quantiles",
    "aux_scale",
]

GAMMA_CAP = 5.0
_LOG2 = math.log(2.0)


@dataclass(frozen=True)
class EviEstimate:
    gamma_hat: float
    k: int
    at: float | None = None


def pickands_from_quantiles(q1, q2, q4, cap: float = GAMMA_CAP):
    """log((q1 - q2)/(q2 - q4)) / log 2 for quantiles at n/k, n/2k, n/4k.

    Works elementwise on arrays; entries with a nonpositive spacing become
    NaN.  Scalars raise :class:`DegeneratePickands` instead.
    """
    q1, q2, q4 = (np.asarray(v, dtype=float) for v in (q1, q2, q4))
    num = q1 - q2
    den = q2 - q4
    ok = (num > 0) & (den > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(ok, np.log(np.where(ok, num / np.where(ok, den, 1.0), 1.0)) / _LOG2, np.nan)
    if np.ndim(g) == 0:
        if not ok:
            raise DegeneratePickands(f"quantile spacings ({float(num)}, {float(den)}) are not positive")
        g = float(g)
    clipped = np.clip(g, -cap, cap)
    if np.any(np.abs(np.asarray(g)[np.isfinite(g)]) > cap):
        warnings.warn(f"Pickands estimate clamped to |gamma| <= {cap}", RuntimeWarning, stacklevel=2)
    return float(clipped) if np.ndim(clipped) == 0 else clipped


def marginal_quantiles(y, k: int) -> tuple[float, float, float]:
    """Sample quantiles at return periods n/k, n/(2k), n/(4k)."""
    y = np.asarray(y, dtype=float).reshape(-1)
    n = y.size
    check_k(k, n)
    return tuple(empirical_quantile(y, n / (c * k)) for c in (1, 2, 4))


def pickands_unconditional(y, k: int, cap: float = GAMMA_CAP) -> EviEstimate:
    q1, q2, q4 = marginal_quantiles(y, k)
    return EviEstimate(pickands_from_quantiles(q1, q2, q4, cap), int(k))


def pickands_curve(x, y, points, k: int, spec: KernelSpec = EPANECHNIKOV, h: float = 0.1,
                   cap: float = GAMMA_CAP) -> np.ndarray:
    """Conditional Pickands estimates at many points with one common bandwidth.

    Degenerate points (empty neighborhood or nonpositive spacing) are NaN.
    """
    n = np.asarray(y).size
    check_k(k, n)
    est = KernelConditional(x, y, spec, h)
    q = est.quantiles(points, [n / k, n / (2 * k), n / (4 * k)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.atleast_1d(pickands_from_quantiles(q[:, 0], q[:, 1], q[:, 2], cap))


def pickands_conditional(x, y, x0, k: int, spec: KernelSpec = EPANECHNIKOV, h: float = 0.1,
                         cap: float = GAMMA_CAP) -> EviEstimate:
    n = np.asarray(y).size
    check_k(k, n)
    est = KernelConditional(x, y, spec, h)
    q1, q2, q4 = (est.quantile(x0, n / (c * k)) for c in (1, 2, 4))
    return EviEstimate(pickands_from_quantiles(q1, q2, q4, cap), int(k), x0)


def aux_scale(y, k: int, gamma_hat: float) -> float:
    """Spacing-based estimate of the auxiliary scale a0(n/k).

    gamma * (U(n/k) - U(n/2k)) / (1 - 2^-gamma), whose gamma -> 0 limit is
    (U(n/k) - U(n/2k)) / log 2.
    """
    q1, q2, _ = marginal_quantiles(y, k)
    return scale_from_spacing(q1 - q2, gamma_hat)


def scale_from_spacing(spacing: float, gamma_hat: float) -> float:
    if not spacing > 0:
        raise DegenerateScale(f"quantile spacing {spacing} is not positive")
    if abs(gamma_hat) <= GAMMA_EPS:
        return float(spacing / _LOG2)
    return float(gamma_hat * spacing / -math.expm1(-gamma_hat * _LOG2))
