"""Kernel-weighted generalized Pareto likelihood along a scalar index.

Each local fit maximizes

    sum_i w_i(z0) log g(Y_i - u_i | gamma, a) I(Y_i > u_i),

where ``u_i`` is the leave-one-out kernel quantile at level 1 - k/n evaluated
at ``Z_i`` and ``w_i(z0) = K((Z_i - z0)/h)``.  Fits at many index points are
run together: the Nelder-Mead simplex below advances every point's simplex
in lockstep so that likelihood evaluations are vectorized over points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import GAMMA_EPS, check_h, check_k, l_gamma
from .errors import DomainError, FitFailed, InsufficientTail
from .kernels import EPANECHNIKOV, KernelConditional, KernelSpec

__all__ = [
    "GpParams",
    "LocalGpFit",
    "gp_log_density",
    "gp_loglik",
    "loo_thresholds",
    "pwm_init",
    "fit_gp_points",
    "fit_gp_local",
    "fit_gp_curve",
    "extrapolated_quantile",
]

MIN_EXCEED = 10.0
N_RESTARTS = 5


@dataclass(frozen=True)
class GpParams:
    gamma: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError(f"GP scale must be positive, got {self.sigma}")


@dataclass
class LocalGpFit:
    z0: float
    gamma_hat: float
    a_hat: float
    k: int
    h: float
    n: int
    n_exceed: float
    loglik: float
    threshold: float = math.nan
    thresholds: np.ndarray | None = field(default=None, repr=False)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def gp_log_density(y, gamma, sigma):
    """log g(y | gamma, sigma); -inf outside the support 1 + gamma y/sigma > 0."""
    y = np.asarray(y, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise DomainError("GP scale must be positive")
    out = _logg(y, gamma, sigma)
    return float(out) if out.ndim == 0 else out


def _logg(y, gamma, sigma):
    small = np.abs(gamma) <= GAMMA_EPS
    g = np.where(small, 1.0, gamma)
    arg = g * y / sigma
    with np.errstate(divide="ignore", invalid="ignore"):
        body = -np.log(sigma) - (1.0 / g + 1.0) * np.log1p(arg)
    body = np.where(arg > -1.0, body, -np.inf)
    return np.where(small, -np.log(sigma) - y / sigma, body)


def gp_loglik(exceed, weights, gamma, sigma) -> float:
    """Weighted GP log-likelihood over entries with positive weight."""
    exceed = np.asarray(exceed, dtype=float)
    weights = np.asarray(weights, dtype=float)
    pos = weights > 0
    return float(np.sum(weights[pos] * _logg(exceed[pos], gamma, sigma)))


def loo_thresholds(y, z, k: int, spec: KernelSpec = EPANECHNIKOV, h: float = 0.1) -> np.ndarray:
    """Leave-one-out quantiles at level 1 - k/n, one per observation (NaN if empty)."""
    y = np.asarray(y, dtype=float).reshape(-1)
    n = y.size
    check_k(k, n)
    est = KernelConditional(z, y, spec, h)
    return est.quantiles(z, [n / k], loo=np.arange(n))[:, 0]


def pwm_init(exceed, weights):
    """Probability-weighted-moment starting values (gamma, a) per weight row.

    ``weights`` is (B, E); rows whose moments are unusable fall back to
    (0.1, weighted mean exceedance).
    """
    exceed = np.asarray(exceed, dtype=float)
    w = np.atleast_2d(np.asarray(weights, dtype=float))
    order = np.argsort(exceed, kind="stable")
    e, w = exceed[order], w[:, order]
    total = w.sum(axis=1)
    safe = np.where(total > 0, total, 1.0)
    cdf = (np.cumsum(w, axis=1) - 0.5 * w) / safe[:, None]
    b0 = (w @ e) / safe
    b1 = (w * (1.0 - cdf)) @ e / safe
    den = b0 - 2.0 * b1
    with np.errstate(divide="ignore", invalid="ignore"):
        gamma = 2.0 - b0 / den
        a = 2.0 * b0 * b1 / den
    gamma = np.clip(gamma, -0.9, 2.0)
    emax = np.max(np.where(w > 0, e[None, :], 0.0), axis=1)
    good = (den > 0) & np.isfinite(gamma) & (a > 0) & (1.0 + gamma * emax / np.where(a > 0, a, 1.0) > 0)
    gamma = np.where(good, gamma, 0.1)
    a = np.where(good, a, np.where(b0 > 0, b0, 1.0))
    return gamma, a


def _neg_mean_loglik(e, w, gamma, log_a):
    """Negative weighted GP log-likelihood per row; +inf outside the support.

    Rows of ``w`` sum to one, so this is -log a - (1 + 1/gamma) E_w log(1 + gamma e / a).
    """
    a = np.exp(log_a)
    g = gamma[:, None]
    arg = g * e / a[:, None]
    feasible = np.all(arg > -1.0, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_log = np.sum(w * np.log1p(np.maximum(arg, -1.0)), axis=1)
        small = np.abs(gamma) <= GAMMA_EPS
        body = (1.0 + 1.0 / np.where(small, 1.0, gamma)) * mean_log
        expo = np.sum(w * e, axis=1) / a
    val = log_a + np.where(small, expo, body)
    return np.where(feasible & np.isfinite(val), val, np.inf)


def _batched_nelder_mead(fun, x0, step, maxiter=500, xatol=1e-8, fatol=1e-12):
    """Minimize ``fun`` independently for each row of ``x0`` (B, d).

    ``fun(x, rows)`` evaluates the objective for parameter rows ``x`` of the
    problems listed in ``rows``.  Standard reflection / expansion /
    contraction / shrink coefficients (1, 2, 1/2, 1/2).
    """
    x0 = np.asarray(x0, dtype=float)
    bsz, dim = x0.shape
    simplex = np.repeat(x0[:, None, :], dim + 1, axis=1)
    for j in range(dim):
        simplex[:, j + 1, j] += step[j]
    all_rows = np.arange(bsz)
    fvals = np.column_stack([fun(simplex[:, j], all_rows) for j in range(dim + 1)])
    active = np.ones(bsz, dtype=bool)
    for _ in range(maxiter):
        order = np.argsort(fvals, axis=1, kind="stable")
        simplex = np.take_along_axis(simplex, order[:, :, None], axis=1)
        fvals = np.take_along_axis(fvals, order, axis=1)
        spread_x = np.max(np.abs(simplex[:, 1:] - simplex[:, :1]), axis=(1, 2))
        spread_f = np.abs(fvals[:, -1] - fvals[:, 0])
        with np.errstate(invalid="ignore"):
            done = (spread_x <= xatol) & (spread_f <= fatol)
        active &= ~done
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        s = simplex[rows]
        f = fvals[rows]
        best, worst = s[:, 0], s[:, -1]
        cent = s[:, :-1].mean(axis=1)
        xr = 2.0 * cent - worst
        fr = fun(xr, rows)
        new_x = s[:, -1].copy()
        new_f = f[:, -1].copy()
        shrink = np.zeros(rows.size, dtype=bool)

        expand = fr < f[:, 0]
        if np.any(expand):
            xe = 3.0 * cent[expand] - 2.0 * worst[expand]
            fe = fun(xe, rows[expand])
            take_e = fe < fr[expand]
            new_x[expand] = np.where(take_e[:, None], xe, xr[expand])
            new_f[expand] = np.where(take_e, fe, fr[expand])
        accept = ~expand & (fr < f[:, -2])
        new_x[accept] = xr[accept]
        new_f[accept] = fr[accept]
        contract = ~expand & ~accept
        if np.any(contract):
            outside = contract & (fr < f[:, -1])
            inside = contract & ~outside
            xc = np.where(outside[:, None], cent + 0.5 * (xr - cent), cent + 0.5 * (worst - cent))
            idx = np.flatnonzero(contract)
            fc = fun(xc[idx], rows[idx])
            ok = np.where(outside[idx], fc <= fr[idx], fc < f[idx, -1])
            good = idx[ok]
            new_x[good] = xc[good]
            new_f[good] = fc[ok]
            shrink[idx[~ok]] = True
        s[:, -1] = new_x
        f[:, -1] = new_f
        if np.any(shrink):
            sidx = np.flatnonzero(shrink)
            for j in range(1, dim + 1):
                s[sidx, j] = best[sidx] + 0.5 * (s[sidx, j] - best[sidx])
                f[sidx, j] = fun(s[sidx, j], rows[sidx])
        simplex[rows] = s
        fvals[rows] = f
    pick = np.argmin(fvals, axis=1)
    return simplex[all_rows, pick], fvals[all_rows, pick]


def _restart_offsets(n: int) -> np.ndarray:
    rng = np.random.default_rng(20240917)
    jitter = rng.uniform(-1.0, 1.0, size=(max(n - 1, 0), 2)) * np.array([0.2, 0.3])
    return np.vstack([np.zeros((1, 2)), jitter])[:n]


def fit_gp_points(y, z, points, k: int, spec: KernelSpec = EPANECHNIKOV, h: float = 0.1,
                  thresholds=None, restarts: int = N_RESTARTS, min_exceed: float = MIN_EXCEED,
                  exceed_weights=None) -> list[LocalGpFit]:
    """Local GP fits at every index point; failures are returned flagged.

    ``thresholds`` defaults to :func:`loo_thresholds`.  ``exceed_weights``
    optionally multiplies each observation's kernel weight (used to check
    the invariance of the maximizer under replicated data).
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    z = np.asarray(z, dtype=float).reshape(-1)
    n = y.size
    check_k(k, n)
    h = check_h(h)
    points = np.atleast_1d(np.asarray(points, dtype=float))
    if thresholds is None:
        thresholds = loo_thresholds(y, z, k, spec, h)
    thresholds = np.asarray(thresholds, dtype=float)
    exc = np.isfinite(thresholds) & (y > thresholds)
    e = y[exc] - thresholds[exc]
    ze = z[exc]
    mult = np.ones(e.size) if exceed_weights is None else np.asarray(exceed_weights, dtype=float)[exc]

    fits = [LocalGpFit(float(p), math.nan, math.nan, k, h, n, 0.0, math.nan, thresholds=thresholds)
            for p in points]
    if points.size == 0:
        return fits
    w = spec((ze[None, :] - points[:, None]) / h) * mult[None, :]
    count = w.sum(axis=1)
    usable = np.flatnonzero(count >= min_exceed)
    for i in np.flatnonzero(count < min_exceed):
        fits[i].n_exceed = float(count[i])
        fits[i].error = f"InsufficientTail: weighted exceedance count {count[i]:.2f} < {min_exceed}"
    if usable.size == 0:
        return fits

    wu = w[usable] / count[usable, None]
    g0, a0 = pwm_init(e, wu)
    # Padded sparse layout: each row keeps only its positive-weight
    # exceedances (padding has weight 0 and excess 0, which is harmless).
    npos = (wu > 0).sum(axis=1)
    width = int(npos.max())
    order = np.argsort(wu <= 0, axis=1, kind="stable")[:, :width]
    pw = np.take_along_axis(wu, order, axis=1)
    pe = np.where(pw > 0, e[order], 0.0)
    offsets = _restart_offsets(restarts)
    nb = usable.size
    rep_rows = np.tile(np.arange(nb), restarts)

    def objective(params, rows):
        rr = rep_rows[rows]
        return _neg_mean_loglik(pe[rr], pw[rr], params[:, 0], params[:, 1])

    starts = np.column_stack([g0, np.log(a0)])
    x0 = np.vstack([starts + off for off in offsets])
    # Pull infeasible jittered starts back toward the moment estimate.
    all_rows = np.arange(x0.shape[0])
    for _ in range(20):
        bad = ~np.isfinite(objective(x0, all_rows))
        if not np.any(bad):
            break
        base = starts[rep_rows[bad]]
        x0[bad] = base + 0.5 * (x0[bad] - base)
    bad = ~np.isfinite(objective(x0, all_rows))
    if np.any(bad):
        fallback = np.column_stack([np.full(nb, 0.1), np.log(np.maximum(wu @ e, 1e-300))])
        x0[bad] = fallback[rep_rows[bad]]
    xs, fs = _batched_nelder_mead(objective, x0, step=(0.1, 0.1))
    fs = fs.reshape(restarts, nb)
    xs = xs.reshape(restarts, nb, 2)
    best = np.argmin(fs, axis=0)
    for b, i in enumerate(usable):
        fit = fits[i]
        fit.n_exceed = float(count[i])
        if not np.isfinite(fs[best[b], b]):
            fit.error = "FitFailed: every restart ended infeasible"
            continue
        fit.gamma_hat = float(xs[best[b], b, 0])
        fit.a_hat = float(np.exp(xs[best[b], b, 1]))
        fit.loglik = float(-fs[best[b], b] * count[i])
    return fits


def fit_gp_local(y, z, z0: float, k: int, spec: KernelSpec = EPANECHNIKOV, h: float = 0.1,
                 thresholds=None, **kwargs) -> LocalGpFit:
    fit = fit_gp_points(y, z, [z0], k, spec, h, thresholds, **kwargs)[0]
    if fit.error is not None:
        kind = fit.error.split(":", 1)[0]
        raise (InsufficientTail if kind == "InsufficientTail" else FitFailed)(fit.error)
    return fit


def fit_gp_curve(y, z, grid, k: int, spec: KernelSpec = EPANECHNIKOV, h: float = 0.1,
                 **kwargs) -> list[LocalGpFit]:
    """Local fits along ``grid`` sharing one set of leave-one-out thresholds.

    Each fit also records the full-sample threshold at its grid point, the
    base of :func:`extrapolated_quantile`.
    """
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        return []
    y = np.asarray(y, dtype=float).reshape(-1)
    thresholds = kwargs.pop("thresholds", None)
    if thresholds is None:
        thresholds = loo_thresholds(y, z, k, spec, h)
    fits = fit_gp_points(y, z, grid, k, spec, h, thresholds, **kwargs)
    base = KernelConditional(z, y, spec, h).quantiles(grid, [y.size / k])[:, 0]
    for fit, u in zip(fits, base):
        fit.threshold = float(u)
    return fits


def extrapolated_quantile(fit: LocalGpFit, tau: float, u_threshold: float | None = None) -> float:
    """U(n/k | z) + a * L_gamma(k / (n tau)) for an exceedance probability tau.

    ``tau = k/n`` returns the threshold itself; larger values are refused
    because they would interpolate below the threshold.
    """
    u = fit.threshold if u_threshold is None else u_threshold
    if not 0 < tau <= fit.k / fit.n:
        raise DomainError(f"tau={tau} must lie in (0, k/n] = (0, {fit.k / fit.n}]")
    return float(u + fit.a_hat * l_gamma(fit.k / (fit.n * tau), fit.gamma_hat))
