"""Linear quantile regression at a tail level and the single-index direction.

The check-loss problem is solved by iteratively reweighted least squares on a
smoothed check function, sqrt(r^2 + eps^2) in place of |r|, halving eps from
1e-2 * scale(y) down to 1e-8 with warm starts.  The result is finished by simplex pivots from the vertex
through the q + 1 smallest residuals, which reach the exact piecewise-linear
optimum in a handful of steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SingularDesign, ZeroDirection

__all__ = [
    "TailQuantileFit",
    "SingleIndexDirection",
    "check_loss",
    "fit_tail_quantreg",
    "single_index_direction",
]

_RIDGE = 1e-10
_EPS_START = 1e-2
_EPS_END = 1e-8


@dataclass(frozen=True)
class TailQuantileFit:
    beta0: float
    beta: np.ndarray
    s: float
    objective: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class SingleIndexDirection:
    alpha: np.ndarray
    source: TailQuantileFit


def check_loss(u, s: float):
    """rho_s(u) = u (tau - I(u < 0)) with tau = 1 - 1/s."""
    if not s > 1:
        raise DomainError(f"s must exceed 1, got {s}")
    u = np.asarray(u, dtype=float)
    tau = 1.0 - 1.0 / s
    out = u * (tau - (u < 0))
    return float(out) if out.ndim == 0 else out


def _objective(y, d, coef, tau):
    r = y - d @ coef
    return float(np.sum(r * (tau - (r < 0))))


def _simplex_polish(y, d, coef, tau, max_pivots: int = 200):
    """Exact finish: start at the vertex through the q + 1 smallest residuals
    and pivot along descending edges until no edge decreases the check loss.

    Returns ``(coef, optimal)``, or None if a basis is singular.
    """
    m = d.shape[1]
    basis = np.argsort(np.abs(y - d @ coef), kind="stable")[:m]
    try:
        inv = np.linalg.inv(d[basis])
    except np.linalg.LinAlgError:
        return None
    coef = inv @ y[basis]
    slack = 1e-12 * max(1.0, float(np.abs(y).max()))
    optimal = False
    for _ in range(max_pivots):
        r = y - d @ coef
        r[basis] = 0.0
        mult = d @ inv
        inb = np.zeros(y.size, dtype=bool)
        inb[basis] = True
        psi = np.where(r < 0, tau - 1.0, tau)
        psi[inb] = 0.0
        g = -(psi @ mult)
        up = g + (1.0 - tau)
        down = -g + tau
        l_up, l_down = int(np.argmin(up)), int(np.argmin(down))
        if min(up[l_up], down[l_down]) >= -slack:
            optimal = True
            break
        l, sign, slope = (l_up, 1.0, up[l_up]) if up[l_up] <= down[l_down] else (l_down, -1.0, down[l_down])
        a = -sign * mult[:, l]
        a[inb] = 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -r / a
        cand = np.flatnonzero(~inb & (a != 0) & (t > 0))
        if cand.size == 0:
            break
        cand = cand[np.argsort(t[cand], kind="stable")]
        cross = slope + np.cumsum(np.abs(a[cand]))
        stop = int(np.argmax(cross >= 0)) if np.any(cross >= 0) else cand.size - 1
        enter = cand[stop]
        coef = coef + t[enter] * sign * inv[:, l]
        basis[l] = enter
        try:
            inv = np.linalg.inv(d[basis])
        except np.linalg.LinAlgError:
            return None
        coef = inv @ y[basis]
    return coef, optimal


def fit_tail_quantreg(y, x, s: float, max_inner: int = 10, max_final: int = 10,
                      tol: float = 1e-10, k: int | None = None) -> TailQuantileFit:
    """Minimize sum rho_s(y_i - b0 - b'x_i) over (b0, b).

    ``k`` optionally enforces the tail-sample guard q < k.  ``converged``
    reports that the final vertex has no descending edge, or, failing a
    vertex, that the last smoothing level met ``tol``.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    n, q = x.shape
    if not s > 1:
        raise DomainError(f"s must exceed 1, got {s}")
    if k is not None and q >= k:
        raise SingularDesign(f"{q} covariates but only k={k} tail observations")
    if q >= n:
        raise SingularDesign(f"{q} covariates for {n} observations")
    center = x.mean(axis=0)
    xc = x - center
    if q and np.linalg.matrix_rank(xc) < q:
        raise SingularDesign("design matrix is rank deficient after centering")
    tau = 1.0 - 1.0 / s
    d = np.column_stack([np.ones(n), xc])
    scale = np.median(np.abs(y - np.median(y)))
    if scale <= 0:
        scale = max(np.std(y), 1.0)

    coef = np.zeros(q + 1)
    coef[0] = np.quantile(y, tau)
    lin = 0.25 * (2 * tau - 1) * d.sum(axis=0)
    eps = _EPS_START * scale
    iterations = 0
    converged = False
    while True:
        final = eps <= _EPS_END
        prev = None
        for _ in range(max_final if final else max_inner):
            r = y - d @ coef
            c = 0.25 / np.sqrt(r * r + eps * eps)
            gram = d.T @ (d * c[:, None])
            gram[np.diag_indices_from(gram)] += _RIDGE * np.trace(gram) / (q + 1)
            coef = np.linalg.solve(gram, d.T @ (c * y) + lin)
            iterations += 1
            r = y - d @ coef
            obj = float(np.sum(np.sqrt(r * r + eps * eps) + (2 * tau - 1) * r))
            if prev is not None and abs(prev - obj) <= tol * abs(obj):
                converged = final
                break
            prev = obj
        if final:
            break
        eps = max(eps / 2, _EPS_END)

    best = _objective(y, d, coef, tau)
    polished = _simplex_polish(y, d, coef, tau)
    if polished is not None:
        vertex, optimal = polished
        vobj = _objective(y, d, vertex, tau)
        if vobj <= best:
            coef, best, converged = vertex, vobj, optimal
    beta = coef[1:].copy()
    beta0 = float(coef[0] - center @ beta)
    return TailQuantileFit(beta0, beta, float(s), best, iterations, converged)


def single_index_direction(fit: TailQuantileFit) -> SingleIndexDirection:
    norm = float(np.linalg.norm(fit.beta))
    if norm == 0:
        raise ZeroDirection("tail regression slope is zero")
    return SingleIndexDirection(fit.beta / norm, fit)
