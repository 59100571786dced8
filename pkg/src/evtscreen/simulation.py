"""Simulation designs, replication runner and metric aggregation."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .core import Dataset, check_k, rank_transform_matrix
from .errors import ConfigError, DomainError, EvtScreenError
from .gp import LocalGpFit, fit_gp_points, gp_log_density, loo_thresholds
from .kernels import EPANECHNIKOV, KernelConditional
from .screening import minimum_model_size, nested_set, screen
from .tail_quantreg import fit_tail_quantreg, single_index_direction
from .tuning import screening_bandwidth, select_k, select_model_size

__all__ = [
    "MODEL_ACTIVE",
    "make_rng",
    "ar1_covariance",
    "gen_covariates",
    "gamma_model",
    "survival",
    "response_from_uniform",
    "sample_response",
    "generate",
    "SimulationSpec",
    "ReplicationRecord",
    "MetricsReport",
    "run_replication",
    "run_simulation",
    "aggregate",
    "index_gp_fit",
    "records_to_csv",
]

MODEL_ACTIVE = {
    "a": (0,),
    "b": (0, 1, 2, 3),
    "c": (0, 1, 9, 10),
    "d": (0, 1, 9, 10),
}

_MIN_GAMMA = 1e-6


def make_rng(seed: int, rep_index: int = 0) -> np.random.Generator:
    """Counter-based Philox stream keyed by (seed, replication index)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(rep_index)])))


def ar1_covariance(p: int, r: float) -> np.ndarray:
    idx = np.arange(p)
    return r ** np.abs(idx[:, None] - idx[None, :])


def gen_covariates(n: int, p: int, r: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian rows with covariance r^|i-j|, each column mapped to rank/n."""
    if not 0 <= r < 1:
        raise DomainError(f"r must lie in [0, 1), got {r}")
    chol = np.linalg.cholesky(ar1_covariance(p, r))
    z = rng.standard_normal((n, p)) @ chol.T
    return rank_transform_matrix(z)


def gamma_model(model: str, x) -> np.ndarray:
    """Extreme value index functions of the four simulation designs.

    ``x`` is a p-vector or an n x p matrix; columns are 0-based, so the
    first covariate is ``x[..., 0]``.
    """
    x = np.asarray(x, dtype=float)
    c = lambda j: x[..., j]  # noqa: E731
    if model == "a":
        return 0.3 * np.exp(-2.5 * c(0))
    if model == "b":
        return 0.3 * np.exp(-2 * (c(0) + c(1) + c(2) + c(3)))
    if model == "c":
        return 0.3 * np.exp(-2 * (c(0) + c(1) + c(9) + c(10)))
    if model == "d":
        return 0.2 * (c(9) + c(10)) * np.exp(-2 * (c(0) + c(1)))
    raise DomainError(f"unknown model {model!r}")


def survival(y, gamma, m):
    """1 - F(y | x) = (1 + m) v / (1 + v) with v = y^(-1/gamma)."""
    y, gamma = np.asarray(y, dtype=float), np.asarray(gamma, dtype=float)
    v = y ** (-1.0 / gamma)
    return (1.0 + m) * v / (1.0 + v)


def response_from_uniform(u, gamma, m):
    """Closed-form inverse of :func:`survival` at survival probability u."""
    u, gamma = np.asarray(u, dtype=float), np.asarray(gamma, dtype=float)
    if np.any(gamma <= 0):
        raise DomainError("the response law needs gamma > 0")
    if not m > 0:
        raise DomainError("the response law needs m > 0")
    return (u / (1.0 + m - u)) ** (-gamma)


def sample_response(gamma, m: float, rng: np.random.Generator):
    gamma = np.asarray(gamma, dtype=float)
    u = rng.uniform(size=gamma.shape)
    y = response_from_uniform(u, gamma, m)
    return float(y) if y.ndim == 0 else y


def generate(model: str, n: int, p: int, r: float, m: float, rng: np.random.Generator):
    """Draw (x, y, gamma) for one design; returns rank-scale covariates."""
    if p <= max(MODEL_ACTIVE[model]):
        raise DomainError(f"model {model} needs p > {max(MODEL_ACTIVE[model])}")
    x = gen_covariates(n, p, r, rng)
    g = gamma_model(model, x)
    while np.any(g < _MIN_GAMMA):
        x = gen_covariates(n, p, r, rng)
        g = gamma_model(model, x)
    y = sample_response(g, m, rng)
    return x, y, g


@dataclass(frozen=True)
class SimulationSpec:
    """One simulation design.

    ``k`` and ``h`` are the common screening order and bandwidth (also used
    for the model-size search); either may be ``"auto"``.  With ``table3``
    set, each replication also scores the index GP fit with the fixed
    ``table3_k``/``table3_h`` for every covariate set in ``table3_sets``
    (integers are top-j sets; ``"true"``, ``"jstar"``, ``"jdstar"`` are
    the true set and the two selected sets).
    """

    model: str = "a"
    n: int = 2500
    p: int = 100
    r: float = 0.2
    m: float = 0.2
    replications: int = 100
    seed: int = 20240601
    q_cap: int = 50
    k: int | str = 400
    h: float | str = 0.3
    reporting_size: int = 50
    select: bool = True
    table3: bool = False
    table3_k: int = 400
    table3_h: float = 0.3
    table3_sets: tuple = ("jstar", "jdstar", 1, 4, 10, 20, 40, "true")
    gp_restarts: int = 5

    def __post_init__(self):
        if self.model not in MODEL_ACTIVE:
            raise ConfigError(f"unknown model {self.model!r}")
        if self.p <= max(MODEL_ACTIVE[self.model]):
            raise ConfigError(f"model {self.model} needs p > {max(MODEL_ACTIVE[self.model])}")
        if not 0 <= self.r < 1:
            raise ConfigError(f"r must lie in [0, 1), got {self.r}")
        if not self.m > 0:
            raise ConfigError(f"m must be positive, got {self.m}")
        if self.replications < 1 or self.q_cap < 1 or self.reporting_size < 1:
            raise ConfigError("replications, q_cap and reporting_size must be positive")
        for name in ("k", "h"):
            val = getattr(self, name)
            if isinstance(val, str) and val != "auto":
                raise ConfigError(f"{name} must be a number or 'auto', got {val!r}")
        object.__setattr__(self, "table3_sets", tuple(self.table3_sets))

    @property
    def active(self) -> tuple[int, ...]:
        return MODEL_ACTIVE[self.model]

    @classmethod
    def from_mapping(cls, raw: dict) -> "SimulationSpec":
        known = {f.name: f for f in fields(cls)}
        unknown = set(raw) - set(known)
        if unknown:
            raise ConfigError(f"unknown simulation keys: {sorted(unknown)}")
        out = {}
        for key, val in raw.items():
            out[key] = _coerce(key, val)
        try:
            return cls(**out)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_text(cls, text: str) -> "SimulationSpec":
        """Parse JSON or ``key = value`` lines (``#`` starts a comment)."""
        stripped = text.strip()
        if stripped.startswith("{"):
            try:
                return cls.from_mapping(json.loads(stripped))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"bad JSON spec: {exc}") from exc
        raw = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, val = (part.strip() for part in line.split("=", 1))
            raw[key] = val
        return cls.from_mapping(raw)

    @classmethod
    def from_file(cls, path) -> "SimulationSpec":
        try:
            with open(path) as fh:
                return cls.from_text(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read spec {path}: {exc}") from exc


def _parse_scalar(val):
    if not isinstance(val, str):
        return val
    low = val.strip().lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for conv in (int, float):
        try:
            return conv(val)
        except ValueError:
            pass
    return val.strip().strip("\"'")


def _coerce(key, val):
    if key == "table3_sets":
        if isinstance(val, str):
            val = [v for v in val.replace("(", "").replace(")", "").split(",") if v.strip()]
        return tuple(int(v) if str(v).strip().lstrip("-").isdigit() else str(v).strip().lower()
                     for v in val)
    val = _parse_scalar(val)
    if key in ("n", "p", "replications", "seed", "q_cap", "reporting_size", "table3_k", "gp_restarts"):
        if isinstance(val, float) and val.is_integer():
            val = int(val)
        if not isinstance(val, int) or isinstance(val, bool):
            raise ConfigError(f"{key} must be an integer, got {val!r}")
    if key == "k" and isinstance(val, float) and val.is_integer():
        val = int(val)
    return val


@dataclass
class ReplicationRecord:
    rep_index: int
    S: float = math.nan
    j_star: float = math.nan
    j_double_star: float = math.nan
    tp_star: float = math.nan
    tp_double_star: float = math.nan
    k: float = math.nan
    h: float = math.nan
    ase: dict = field(default_factory=dict)
    loss: dict = field(default_factory=dict)
    error: str | None = None


def _true_positive(ranking, active, j: int) -> float:
    top = set(int(c) for c in np.asarray(ranking)[:j])
    return len(top & set(active)) / len(active)


def index_gp_fit(y, x, cols, k: int, h: float, points_x, spec=EPANECHNIKOV, restarts: int = 5):
    """Fit the index model on ``cols`` and evaluate it at new covariate rows.

    The direction comes from the tail quantile regression; the index is mapped
    to [0, 1] with the training range, and the same map is applied to
    ``points_x``.  Returns ``(fits, base_thresholds, z_points)`` where
    ``base_thresholds`` is the full-sample kernel quantile at each point.
    """
    cols = np.asarray(cols, dtype=int)
    n = y.size
    fit = fit_tail_quantreg(y, x[:, cols], n / k, k=k)
    alpha = single_index_direction(fit).alpha
    z_raw = x[:, cols] @ alpha
    lo, span = z_raw.min(), z_raw.max() - z_raw.min()
    span = span if span > 0 else 1.0
    z = (z_raw - lo) / span
    zp = (points_x[:, cols] @ alpha - lo) / span
    thr = loo_thresholds(y, z, k, spec, h)
    uniq, inverse = np.unique(zp, return_inverse=True)
    fits = fit_gp_points(y, z, uniq, k, spec, h, thr, restarts=restarts)
    base = KernelConditional(z, y, spec, h).quantiles(uniq, [n / k])[:, 0]
    return [fits[i] for i in inverse], base[inverse], zp


def _table3_scores(spec: SimulationSpec, x, y, x_test, y_test, g_test, ranking, j_star, j_2star):
    k, h = spec.table3_k, spec.table3_h
    check_k(k, y.size)
    ase, loss = {}, {}
    for label in spec.table3_sets:
        if label == "true":
            cols = np.array(spec.active)
        elif label == "jstar":
            if not np.isfinite(j_star):
                continue
            cols = ranking[: int(j_star)]
        elif label == "jdstar":
            if not np.isfinite(j_2star):
                continue
            cols = ranking[: int(j_2star)]
        else:
            cols = ranking[: int(label)]
        key = str(label)
        try:
            fits, base, _ = index_gp_fit(y, x, cols, k, h, x_test, restarts=spec.gp_restarts)
        except EvtScreenError:
            ase[key], loss[key] = math.nan, math.nan
            continue
        gam = np.array([f.gamma_hat for f in fits])
        a = np.array([f.a_hat for f in fits])
        ok = np.isfinite(gam)
        ase[key] = float(np.mean((gam[ok] - g_test[ok]) ** 2)) if ok.any() else math.nan
        exc = ok & np.isfinite(base) & (y_test > base)
        if exc.any():
            ll = gp_log_density(y_test[exc] - base[exc], gam[exc], a[exc])
            loss[key] = float(-np.mean(ll))
        else:
            loss[key] = math.nan
    return ase, loss


def run_replication(spec: SimulationSpec, rep_index: int) -> ReplicationRecord:
    """Generate, screen, select and (in table-3 mode) score one replication.

    Estimation failures are stored in ``error``; they never raise.
    """
    rec = ReplicationRecord(rep_index)
    rng = make_rng(spec.seed, rep_index)
    x, y, _ = generate(spec.model, spec.n, spec.p, spec.r, spec.m, rng)
    try:
        data = Dataset(y, x)
        k = select_k(y)[0] if spec.k == "auto" else int(spec.k)
        h = screening_bandwidth(data, k) if spec.h == "auto" else float(spec.h)
        rec.k, rec.h = k, h
        res = screen(data, k, h=h)
        rec.S = minimum_model_size(res.ranking, spec.active)
        j_star = j_2star = math.nan
        if spec.select:
            j_star, j_2star, _ = select_model_size(data, res, spec.q_cap, restarts=spec.gp_restarts)
            rec.j_star, rec.j_double_star = j_star, j_2star
            rec.tp_star = _true_positive(res.ranking, spec.active, j_star)
            rec.tp_double_star = _true_positive(res.ranking, spec.active, j_2star)
        if spec.table3:
            x_t, y_t, g_t = generate(spec.model, spec.n, spec.p, spec.r, spec.m, rng)
            rec.ase, rec.loss = _table3_scores(spec, x, y, x_t, y_t, g_t, res.ranking, j_star, j_2star)
    except (EvtScreenError, np.linalg.LinAlgError) as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
    return rec


def _run_one(args):
    return run_replication(*args)


def run_simulation(spec: SimulationSpec, n_jobs: int = 1, progress=None) -> list[ReplicationRecord]:
    """All replications, optionally in worker processes; sorted by index."""
    jobs = [(spec, i) for i in range(spec.replications)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            records = []
            for rec in pool.map(_run_one, jobs):
                records.append(rec)
                if progress:
                    progress(rec)
    else:
        records = []
        for job in jobs:
            rec = _run_one(job)
            records.append(rec)
            if progress:
                progress(rec)
    return sorted(records, key=lambda r: r.rep_index)


S_LEVELS = (5, 25, 50, 75, 95)


@dataclass(frozen=True)
class MetricsReport:
    S_quantiles: tuple
    P: float
    TP_star: float
    TP_double_star: float
    replications: int
    failures: int
    reporting_size: int
    ase: dict = field(default_factory=dict)
    loss: dict = field(default_factory=dict)

    def table12_row(self) -> dict:
        row = {f"S_{q}%": v for q, v in zip(S_LEVELS, self.S_quantiles)}
        row.update({"P": self.P, "TP*": self.TP_star, "TP**": self.TP_double_star,
                    "replications": self.replications, "failures": self.failures})
        return row

    def table3_rows(self) -> list[dict]:
        rows = []
        for key in self.ase:
            a_med, a_mad = self.ase[key]
            l_med, l_mad = self.loss.get(key, (math.nan, math.nan))
            rows.append({"set": key, "ASE_median": a_med, "ASE_mad": a_mad,
                         "L_median": l_med, "L_mad": l_mad})
        return rows

    def to_csv(self, path) -> None:
        """Screening summary row, followed by a per-covariate-set fit block when present."""
        with open(path, "w", newline="") as fh:
            row = self.table12_row()
            w = csv.writer(fh)
            w.writerow(list(row))
            w.writerow([_fmt(v) for v in row.values()])
            if self.ase:
                w.writerow([])
                rows = self.table3_rows()
                w.writerow(list(rows[0]))
                for r in rows:
                    w.writerow([_fmt(v) for v in r.values()])


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _median_mad(values):
    v = np.asarray([x for x in values if np.isfinite(x)], dtype=float)
    if v.size == 0:
        return (math.nan, math.nan)
    med = float(np.median(v))
    return (med, float(np.median(np.abs(v - med))))


def aggregate(records, reporting_size: int = 50) -> MetricsReport:
    """S quantiles, capture proportion at ``reporting_size``, TP means and
    median/mad of the table-3 scores.  Failed replications are excluded from
    every metric and counted in ``failures``.
    """
    records = sorted(records, key=lambda r: r.rep_index)
    if not records:
        raise DomainError("no replication records to aggregate")
    good = [r for r in records if r.error is None]
    s = np.array([r.S for r in good], dtype=float)
    s = s[np.isfinite(s)]
    if s.size:
        quants = tuple(float(v) for v in np.percentile(s, S_LEVELS, method="inverted_cdf"))
        p_cap = float(np.mean(s <= reporting_size))
    else:
        quants, p_cap = (math.nan,) * len(S_LEVELS), math.nan

    def mean_of(attr):
        v = np.array([getattr(r, attr) for r in good], dtype=float)
        v = v[np.isfinite(v)]
        return float(v.mean()) if v.size else math.nan

    keys = []
    for r in good:
        keys += [k for k in r.ase if k not in keys]
    ase = {k: _median_mad([r.ase.get(k, math.nan) for r in good]) for k in keys}
    loss = {k: _median_mad([r.loss.get(k, math.nan) for r in good]) for k in keys}
    return MetricsReport(quants, p_cap, mean_of("tp_star"), mean_of("tp_double_star"),
                         len(records), len(records) - len(good), reporting_size, ase, loss)


def records_to_csv(records, path) -> None:
    """One row per replication (table-3 scores flattened as ``ASE[set]``/``L[set]``)."""
    records = sorted(records, key=lambda r: r.rep_index)
    sets = []
    for r in records:
        sets += [k for k in r.ase if k not in sets]
    base = ["rep_index", "S", "j_star", "j_double_star", "tp_star", "tp_double_star", "k", "h"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(base + [f"ASE[{k}]" for k in sets] + [f"L[{k}]" for k in sets] + ["error"])
        for r in records:
            d = asdict(r)
            w.writerow([_fmt(d[c]) for c in base]
                       + [_fmt(r.ase.get(k, math.nan)) for k in sets]
                       + [_fmt(r.loss.get(k, math.nan)) for k in sets] + [r.error or ""])
