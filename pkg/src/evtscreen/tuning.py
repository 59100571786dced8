"""Data-driven tuning: bandwidth cross-validation, the uniform-plotting
discrepancy used to choose k, and the model-size selectors.

The discrepancy transforms each exceedance ``e`` over the threshold by the
fitted generalized Pareto law, ``V = (1 + gamma e / a)^(-1/gamma)``, and
scores the sorted ``V`` against the plotting positions ``i / (n_T + 1)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .core import GAMMA_EPS, Dataset, check_k, empirical_quantile
from .errors import (
    DegeneratePickands,
    DegenerateScale,
    EstimationError,
    FitFailed,
    NoExceedances,
    NoFeasibleBandwidth,
    NoFeasibleK,
    SelectionFailed,
)
from .evi import aux_scale, pickands_unconditional
from .gp import fit_gp_points, loo_thresholds
from .kernels import EPANECHNIKOV, KernelConditional, KernelSpec
from .screening import ScreeningResult, nested_set
from .tail_quantreg import check_loss, fit_tail_quantreg, single_index_direction

__all__ = [
    "DEFAULT_H_GRID",
    "default_k_grid",
    "TuningTrace",
    "bandwidth_cv",
    "screening_bandwidth",
    "exceedance_uniforms",
    "discrepancy_from_uniforms",
    "discrepancy_unconditional",
    "select_k",
    "discrepancy_conditional",
    "normalize_index",
    "select_model_size",
    "tune_gp",
]

DEFAULT_H_GRID = tuple(round(0.05 * i, 2) for i in range(1, 11))


def default_k_grid(n: int, steps: int = 25) -> np.ndarray:
    """Log-spaced integers from ceil(n/100) to ceil(n/5), restricted to 1 < k < n/4."""
    lo, hi = math.ceil(n / 100), math.ceil(n / 5)
    grid = np.unique(np.ceil(np.geomspace(lo, hi, steps)).astype(int))
    return grid[(grid > 1) & (4 * grid < n)]


@dataclass
class TuningTrace:
    """Everything a tuning run evaluated; infeasible entries are NaN."""

    h_grid: list[float] = field(default_factory=list)
    cv_loss: list[float] = field(default_factory=list)
    h: float | None = None
    k_grid: list[int] = field(default_factory=list)
    discrepancy: list[float] = field(default_factory=list)
    h_by_k: list[float] = field(default_factory=list)
    k: int | None = None
    sizes: list[int] = field(default_factory=list)
    size_discrepancy: list[float] = field(default_factory=list)
    j_star: int | None = None
    j_double_star: int | None = None
    j_double_star_defined: bool = True
    notes: dict[int, str] = field(default_factory=dict)

    def rows(self):
        """Long-format rows ``(criterion, parameter, value)``."""
        out = [("cv_loss", h, v) for h, v in zip(self.h_grid, self.cv_loss)]
        out += [("discrepancy_k", k, v) for k, v in zip(self.k_grid, self.discrepancy)]
        out += [("h_opt_k", k, v) for k, v in zip(self.k_grid, self.h_by_k)]
        out += [("discrepancy_size", j, v) for j, v in zip(self.sizes, self.size_discrepancy)]
        for name in ("h", "k", "j_star", "j_double_star"):
            val = getattr(self, name)
            if val is not None:
                out.append(("chosen", name, val))
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["criterion", "parameter", "value"])
            for crit, par, val in self.rows():
                w.writerow([crit, par, repr(float(val))])


def bandwidth_cv(x, y, t: float, h_grid=DEFAULT_H_GRID, spec: KernelSpec = EPANECHNIKOV):
    """Leave-one-out check-loss bandwidth choice at return period ``t``.

    Bandwidths leaving any observation with an empty neighborhood are
    infeasible.  Ties go to the smaller bandwidth.  Returns ``(h_opt, trace)``.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    n = y.size
    grid = sorted({float(h) for h in np.atleast_1d(h_grid)})
    losses = []
    for h in grid:
        q = KernelConditional(x, y, spec, h).quantiles(x, [t], loo=np.arange(n))[:, 0]
        losses.append(float(np.mean(check_loss(y - q, t))) if np.all(np.isfinite(q)) else math.nan)
    arr = np.array(losses)
    if not np.any(np.isfinite(arr)):
        raise NoFeasibleBandwidth("every bandwidth leaves an empty neighborhood")
    best = int(np.nanargmin(arr))
    return grid[best], TuningTrace(h_grid=grid, cv_loss=losses, h=grid[best])


def screening_bandwidth(dataset: Dataset, k: int, h_grid=DEFAULT_H_GRID,
                        spec: KernelSpec = EPANECHNIKOV, max_h: float = 0.25):
    """Common screening bandwidth: cross-validate every column at n/k and
    take the choice of the column with the lowest attained loss.

    Pooling the loss over all columns lets the many uninformative columns
    (where oversmoothing is optimal) dictate the bandwidth, so instead the
    most predictive column decides.  Grid values above ``max_h`` are dropped
    because boundary trimming on [h, 1 - h] leaves too few evaluation points.
    """
    grid = [h for h in sorted({float(h) for h in h_grid}) if h <= max_h]
    if not grid:
        raise NoFeasibleBandwidth(f"no grid bandwidth is <= {max_h}")
    t = dataset.n / k
    best_loss, best_h = math.inf, None
    for j in range(dataset.p):
        try:
            h, trace = bandwidth_cv(dataset.x[:, j], dataset.y, t, grid, spec)
        except NoFeasibleBandwidth:
            continue
        loss = float(np.nanmin(trace.cv_loss))
        if loss < best_loss:
            best_loss, best_h = loss, h
    if best_h is None:
        raise NoFeasibleBandwidth("no column admits a feasible bandwidth")
    return best_h


def exceedance_uniforms(excess, gamma, a) -> np.ndarray:
    """exp(-E) with E = log(1 + gamma e / a) / gamma (E = e / a near gamma = 0).

    Excesses beyond a negative-gamma endpoint get V = 0.
    """
    e = np.asarray(excess, dtype=float)
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), e.shape)
    a = np.broadcast_to(np.asarray(a, dtype=float), e.shape)
    small = np.abs(gamma) <= GAMMA_EPS
    g = np.where(small, 1.0, gamma)
    arg = g * e / a
    with np.errstate(divide="ignore", invalid="ignore"):
        big = np.log1p(arg) / g
    energy = np.where(small, e / a, np.where(arg > -1.0, big, np.inf))
    return np.exp(-energy)


def discrepancy_from_uniforms(v) -> float:
    """Mean squared gap between sorted ``v`` and i / (n_T + 1)."""
    v = np.sort(np.asarray(v, dtype=float).reshape(-1))
    if v.size == 0:
        raise NoExceedances("no exceedances to score")
    pos = np.arange(1, v.size + 1) / (v.size + 1)
    return float(np.mean((v - pos) ** 2))


def discrepancy_unconditional(y, k: int) -> float:
    """Discrepancy of the unconditional fit (Pickands shape, spacing scale) at ``k``."""
    y = np.asarray(y, dtype=float).reshape(-1)
    check_k(k, y.size)
    gamma0 = pickands_unconditional(y, k).gamma_hat
    a0 = aux_scale(y, k, gamma0)
    u0 = empirical_quantile(y, y.size / k)
    exc = y[y > u0] - u0
    if exc.size == 0:
        raise NoExceedances(f"no observation exceeds the threshold {u0}")
    return discrepancy_from_uniforms(exceedance_uniforms(exc, gamma0, a0))


def _argmin_first(values) -> int:
    arr = np.asarray(values, dtype=float)
    return int(np.nanargmin(arr))


def select_k(y, k_grid=None):
    """Grid minimizer of :func:`discrepancy_unconditional`; ties go to the smaller k."""
    y = np.asarray(y, dtype=float).reshape(-1)
    grid = default_k_grid(y.size) if k_grid is None else np.unique(np.asarray(k_grid, dtype=int))
    values = []
    for k in grid:
        try:
            values.append(discrepancy_unconditional(y, int(k)))
        except (DegeneratePickands, DegenerateScale, NoExceedances):
            values.append(math.nan)
        except ValueError:
            values.append(math.nan)
    if not np.any(np.isfinite(values)):
        raise NoFeasibleK("no k in the grid gives a usable discrepancy")
    best = _argmin_first(values)
    k = int(grid[best])
    return k, TuningTrace(k_grid=[int(v) for v in grid], discrepancy=values, k=k)


def discrepancy_conditional(y, z, k: int, spec: KernelSpec = EPANECHNIKOV, h: float = 0.1,
                            thresholds=None, **fit_kwargs) -> float:
    """Discrepancy of the local GP fit along the index ``z``.

    Each exceedance over its leave-one-out threshold is transformed with the
    GP parameters fitted at its own index value.  Exceedances whose local fit
    fails are left out; if all fail, :class:`FitFailed` is raised.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    z = np.asarray(z, dtype=float).reshape(-1)
    if thresholds is None:
        thresholds = loo_thresholds(y, z, k, spec, h)
    exc = np.flatnonzero(np.isfinite(thresholds) & (y > thresholds))
    if exc.size == 0:
        raise NoExceedances("no observation exceeds its leave-one-out threshold")
    pts, inverse = np.unique(z[exc], return_inverse=True)
    fits = fit_gp_points(y, z, pts, k, spec, h, thresholds, **fit_kwargs)
    gam = np.array([f.gamma_hat for f in fits])[inverse]
    a = np.array([f.a_hat for f in fits])[inverse]
    ok = np.isfinite(gam) & np.isfinite(a)
    if not np.any(ok):
        raise FitFailed("the local GP fit failed at every exceedance")
    excess = y[exc[ok]] - thresholds[exc[ok]]
    return discrepancy_from_uniforms(exceedance_uniforms(excess, gam[ok], a[ok]))


def normalize_index(z) -> np.ndarray:
    """Affine map of the index onto [0, 1] so rank-scale bandwidths apply."""
    z = np.asarray(z, dtype=float)
    lo, hi = z.min(), z.max()
    if hi <= lo:
        return np.zeros_like(z)
    return (z - lo) / (hi - lo)


def _index_for(dataset: Dataset, cols, k: int):
    fit = fit_tail_quantreg(dataset.y, dataset.x[:, cols], dataset.n / k, k=k)
    direction = single_index_direction(fit)
    return direction, normalize_index(dataset.x[:, cols] @ direction.alpha)


def _selectors(q):
    q = np.asarray(q, dtype=float)
    feasible = np.isfinite(q)
    if not np.any(feasible):
        raise SelectionFailed("no model size gave a usable discrepancy")
    j_star = _argmin_first(q) + 1
    gaps = q[1:] - q[:-1]
    gaps = np.where(feasible[1:] & feasible[:-1], gaps, np.nan)
    if np.any(np.isfinite(gaps)):
        return j_star, int(np.nanargmax(gaps)) + 1, True
    return j_star, j_star, False


def select_model_size(dataset: Dataset, screening: ScreeningResult, q_cap: int = 50,
                      k: int | None = None, h: float | None = None,
                      spec: KernelSpec = EPANECHNIKOV, **fit_kwargs):
    """Selectors j* (minimum discrepancy) and j** (largest increase j -> j+1).

    For each size j the tail quantile regression on the top-j columns gives
    an index, rescaled to [0, 1], along which the local GP fit is scored.
    ``k`` and ``h`` default to the screening values.  Sizes whose fit fails
    are recorded as NaN and excluded from both selectors.
    Returns ``(j_star, j_double_star, trace)``.
    """
    k = screening.k if k is None else int(k)
    h = screening.h if h is None else float(h)
    check_k(k, dataset.n)
    q_cap = int(min(q_cap, dataset.p, k - 1))
    if q_cap < 1:
        raise SelectionFailed("model-size search range is empty")
    trace = TuningTrace(k=k, h=h)
    for j in range(1, q_cap + 1):
        cols = nested_set(screening, j)
        try:
            _, z = _index_for(dataset, cols, k)
            q = discrepancy_conditional(dataset.y, z, k, spec, h, **fit_kwargs)
        except EstimationError as exc:
            trace.notes[j] = f"{type(exc).__name__}: {exc}"
            q = math.nan
        trace.sizes.append(j)
        trace.size_discrepancy.append(q)
    j_star, j_2star, defined = _selectors(trace.size_discrepancy)
    trace.j_star, trace.j_double_star, trace.j_double_star_defined = j_star, j_2star, defined
    return j_star, j_2star, trace


def tune_gp(y, z, k_grid=None, h_grid=DEFAULT_H_GRID, spec: KernelSpec = EPANECHNIKOV,
            **fit_kwargs):
    """Two-stage choice for the GP fit: for each k pick h by cross-validation
    at n/k, then choose the k with the smallest conditional discrepancy.

    Returns ``(k, h, trace)``.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    n = y.size
    grid = default_k_grid(n) if k_grid is None else np.unique(np.asarray(k_grid, dtype=int))
    trace = TuningTrace(k_grid=[int(v) for v in grid])
    for k in grid:
        try:
            h, _ = bandwidth_cv(z, y, n / k, h_grid, spec)
            q = discrepancy_conditional(y, z, int(k), spec, h, **fit_kwargs)
        except (EstimationError, ValueError) as exc:
            trace.notes[int(k)] = f"{type(exc).__name__}: {exc}"
            h, q = math.nan, math.nan
        trace.h_by_k.append(h)
        trace.discrepancy.append(q)
    if not np.any(np.isfinite(trace.discrepancy)):
        raise NoFeasibleK("no k in the grid gives a usable conditional discrepancy")
    best = _argmin_first(trace.discrepancy)
    trace.k, trace.h = int(grid[best]), float(trace.h_by_k[best])
    return trace.k, trace.h, trace
