"""CSV ingestion and the end-to-end analysis commands behind the CLI.

Every command writes plain CSV tables (floats via ``repr`` so that reading
them back reproduces the in-memory values exactly) and, on request, simple
SVG charts.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Dataset, check_k, rank_transform_matrix
from .errors import ConfigError, DataError
from .gp import LocalGpFit, extrapolated_quantile, fit_gp_curve
from .kernels import EPANECHNIKOV, GAUSSIAN, KernelSpec
from .screening import ScreeningResult, nested_set, screen
from .simulation import SimulationSpec, aggregate, records_to_csv, run_simulation
from .tail_quantreg import fit_tail_quantreg, single_index_direction
from .tuning import (
    TuningTrace,
    normalize_index,
    screening_bandwidth,
    select_k,
    select_model_size,
    tune_gp,
)

__all__ = [
    "MISSING_TOKENS",
    "IngestPolicy",
    "IngestReport",
    "RunConfig",
    "SingleIndexFit",
    "ingest_csv",
    "cmd_screen",
    "cmd_fit",
    "cmd_extrapolate",
    "cmd_simulate",
    "cmd_tune",
    "read_curve_csv",
    "write_curve_csv",
]

MISSING_TOKENS = frozenset({"", "?", "NA", "NaN", "nan"})


@dataclass(frozen=True)
class IngestPolicy:
    response_column: str
    max_missing_per_covariate: int = 200
    drop_rows_with_missing: bool = True
    positive_response_required: bool = True
    drop_nonpositive_response: bool = False
    exclude_columns: tuple[str, ...] = ()

    def __post_init__(self):
        if self.max_missing_per_covariate < 0:
            raise ConfigError("max_missing_per_covariate must be nonnegative")


@dataclass
class IngestReport:
    rows_read: int
    covariates_read: int
    dropped_columns: list[str] = field(default_factory=list)
    dropped_rows: list[int] = field(default_factory=list)
    dropped_nonpositive_rows: list[int] = field(default_factory=list)
    excluded_columns: list[str] = field(default_factory=list)

    @property
    def rows_kept(self) -> int:
        return self.rows_read - len(self.dropped_rows) - len(self.dropped_nonpositive_rows)

    @property
    def covariates_kept(self) -> int:
        return self.covariates_read - len(self.dropped_columns)

    def summary(self) -> str:
        return (f"rows {self.rows_read} -> {self.rows_kept} "
                f"({len(self.dropped_rows)} with missing values, "
                f"{len(self.dropped_nonpositive_rows)} nonpositive responses); "
                f"covariates {self.covariates_read} -> {self.covariates_kept} "
                f"({len(self.dropped_columns)} over the missing cap)")


def _parse_cell(cell: str, row: int, col: str) -> float:
    cell = cell.strip()
    if cell in MISSING_TOKENS:
        return math.nan
    try:
        return float(cell)
    except ValueError as exc:
        raise DataError(f"row {row}, column {col!r}: non-numeric value {cell!r}") from exc


def ingest_csv(path, policy: IngestPolicy, rank: bool = True):
    """Read a header CSV into a :class:`Dataset` and an :class:`IngestReport`.

    Covariates with more than ``max_missing_per_covariate`` missing cells
    ("?", empty, NA) are dropped first; rows that still have a missing value
    (covariate or response) are dropped next; remaining covariate columns
    are rank-transformed when ``rank`` is set.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    if policy.response_column not in header:
        raise DataError(f"response column {policy.response_column!r} not in header")
    excluded = [c for c in policy.exclude_columns if c in header]
    cov_names = [h for h in header if h != policy.response_column and h not in excluded]
    idx = {h: i for i, h in enumerate(header)}
    for lineno, r in enumerate(body, 2):
        if len(r) != len(header):
            raise DataError(f"line {lineno} has {len(r)} fields, expected {len(header)}")
    y = np.array([_parse_cell(r[idx[policy.response_column]], i, policy.response_column)
                  for i, r in enumerate(body, 2)])
    x = np.array([[_parse_cell(r[idx[c]], i, c) for c in cov_names] for i, r in enumerate(body, 2)],
                 dtype=float).reshape(len(body), len(cov_names))
    report = IngestReport(len(body), len(cov_names), excluded_columns=excluded)
    miss = np.isnan(x).sum(axis=0)
    keep_cols = miss <= policy.max_missing_per_covariate
    report.dropped_columns = [c for c, k in zip(cov_names, keep_cols) if not k]
    x = x[:, keep_cols]
    names = tuple(c for c, k in zip(cov_names, keep_cols) if k)
    incomplete = np.isnan(x).any(axis=1) | np.isnan(y)
    if incomplete.any() and not policy.drop_rows_with_missing:
        raise DataError(f"{int(incomplete.sum())} rows have missing values")
    report.dropped_rows = [int(i) for i in np.flatnonzero(incomplete)]
    nonpos = ~incomplete & (y <= 0)
    if nonpos.any() and policy.positive_response_required:
        if not policy.drop_nonpositive_response:
            raise DataError(f"{int(nonpos.sum())} responses are not positive "
                            f"(first at data row {int(np.flatnonzero(nonpos)[0])})")
        report.dropped_nonpositive_rows = [int(i) for i in np.flatnonzero(nonpos)]
    keep = ~incomplete & ~(nonpos & policy.positive_response_required)
    x, y = x[keep], y[keep]
    if rank and x.shape[1]:
        x = rank_transform_matrix(x)
    return Dataset(y, x, names), report


@dataclass(frozen=True)
class RunConfig:
    """Command parameters; ``"auto"`` selects the value by the tuning rules."""

    k: int | str = "auto"
    h: float | str = "auto"
    kernel: str = "epanechnikov"
    q_cap: int = 50
    tau: float | None = None
    seed: int = 0
    out: str = "."
    gp_k: int | str = "auto"
    gp_h: float | str = "auto"
    size: str = "jstar"
    grid_points: int = 200
    n_jobs: int = 1
    svg: bool = False

    def __post_init__(self):
        for name in ("k", "h", "gp_k", "gp_h"):
            val = getattr(self, name)
            if isinstance(val, str) and val != "auto":
                raise ConfigError(f"{name} must be numeric or 'auto', got {val!r}")
        if self.kernel not in ("epanechnikov", "gaussian"):
            raise ConfigError(f"unknown kernel {self.kernel!r}")
        if self.q_cap < 1:
            raise ConfigError("q_cap must be positive")
        if self.size not in ("jstar", "jdstar") and not str(self.size).isdigit():
            raise ConfigError("size must be 'jstar', 'jdstar' or a positive integer")

    @property
    def spec(self) -> KernelSpec:
        return EPANECHNIKOV if self.kernel == "epanechnikov" else GAUSSIAN


def _out(config: RunConfig, name: str) -> Path:
    d = Path(config.out)
    d.mkdir(parents=True, exist_ok=True)
    return d / name


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def cmd_tune(dataset: Dataset, config: RunConfig):
    """Choose the screening ``(k, h)`` (auto or fixed) and write the k trace."""
    trace = TuningTrace()
    if config.k == "auto":
        k, trace = select_k(dataset.y)
    else:
        k = check_k(int(config.k), dataset.n)
        trace.k = k
    h = screening_bandwidth(dataset, k, spec=config.spec) if config.h == "auto" else float(config.h)
    trace.h = h
    trace.to_csv(_out(config, "screen_tuning.csv"))
    if config.svg and trace.k_grid:
        _svg_line(_out(config, "discrepancy_k.svg"), trace.k_grid, trace.discrepancy,
                  "k", "discrepancy")
    return k, h, trace


def cmd_screen(dataset: Dataset, config: RunConfig) -> ScreeningResult:
    """Screen every covariate; writes ``utilities.csv`` and ``utilities_ranked.csv``."""
    k, h, _ = cmd_tune(dataset, config)
    res = screen(dataset, k, config.spec, h, n_jobs=config.n_jobs)
    _write_rows(_out(config, "utilities.csv"), ["covariate", "utility"],
                zip(dataset.names, res.utilities))
    _write_rows(_out(config, "utilities_ranked.csv"), ["rank", "covariate", "utility"],
                ((i + 1, dataset.names[c], res.utilities[c]) for i, c in enumerate(res.ranking)))
    meta = {"k": res.k, "h": res.h, "gamma0": res.gamma0.gamma_hat,
            "flagged": {dataset.names[j]: msg for j, msg in res.flagged.items()}}
    _out(config, "screening.json").write_text(json.dumps(meta, indent=2) + "\n")
    if config.svg:
        _svg_bars(_out(config, "utilities.svg"), np.nan_to_num(res.utilities))
    return res


@dataclass
class SingleIndexFit:
    columns: np.ndarray
    names: tuple[str, ...]
    alpha: np.ndarray
    k: int
    h: float
    j_star: int
    j_double_star: int
    size: int
    curve: list[LocalGpFit]
    z_min: float
    z_max: float
    trace: TuningTrace | None = None
    gp_trace: TuningTrace | None = None


def cmd_fit(dataset: Dataset, config: RunConfig, screening: ScreeningResult | None = None) -> SingleIndexFit:
    """Screen (unless given), select the model size, estimate the index and
    fit the GP curve on an evenly spaced grid of the rescaled index.
    """
    if screening is None:
        screening = cmd_screen(dataset, config)
    spec = config.spec
    j_star, j_2star, trace = select_model_size(dataset, screening, config.q_cap, spec=spec)
    trace.to_csv(_out(config, "size_tuning.csv"))
    size = {"jstar": j_star, "jdstar": j_2star}.get(config.size) or int(config.size)
    cols = nested_set(screening, min(size, screening.p))
    n = dataset.n
    k_fit = screening.k if config.gp_k == "auto" else int(config.gp_k)
    direction = single_index_direction(fit_tail_quantreg(dataset.y, dataset.x[:, cols], n / k_fit, k=k_fit))
    z_raw = dataset.x[:, cols] @ direction.alpha
    z = normalize_index(z_raw)
    gp_trace = None
    if config.gp_k == "auto" or config.gp_h == "auto":
        k_grid = None if config.gp_k == "auto" else [int(config.gp_k)]
        h_grid = (0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5) if config.gp_h == "auto" else [float(config.gp_h)]
        k_gp, h_gp, gp_trace = tune_gp(dataset.y, z, k_grid, h_grid, spec)
        gp_trace.to_csv(_out(config, "gp_tuning.csv"))
    else:
        k_gp, h_gp = int(config.gp_k), float(config.gp_h)
    grid = np.linspace(0.0, 1.0, config.grid_points)
    curve = fit_gp_curve(dataset.y, z, grid, k_gp, spec, h_gp)
    fit = SingleIndexFit(cols, tuple(dataset.names[c] for c in cols), direction.alpha, k_gp, h_gp,
                         j_star, j_2star, len(cols), curve, float(z_raw.min()), float(z_raw.max()),
                         trace, gp_trace)
    write_curve_csv(_out(config, "curve.csv"), curve)
    summary = {"j_star": j_star, "j_double_star": j_2star,
               "j_double_star_defined": trace.j_double_star_defined, "size": len(cols),
               "k": k_gp, "h": h_gp, "screening_k": screening.k, "screening_h": screening.h,
               "alpha": {name: float(a) for name, a in zip(fit.names, fit.alpha)},
               "index_range": [fit.z_min, fit.z_max]}
    _out(config, "fit.json").write_text(json.dumps(summary, indent=2) + "\n")
    if config.svg:
        _svg_line(_out(config, "size_discrepancy.svg"), trace.sizes, trace.size_discrepancy,
                  "model size j", "discrepancy")
        _svg_line(_out(config, "gamma_curve.svg"), grid, [f.gamma_hat for f in curve],
                  "index z", "EVI estimate")
    return fit


CURVE_HEADER = ["z", "gamma_hat", "a_hat", "threshold", "k", "n", "h", "n_exceed", "error"]


def write_curve_csv(path, curve) -> None:
    _write_rows(path, CURVE_HEADER,
                ([f.z0, f.gamma_hat, f.a_hat, f.threshold, f.k, f.n, f.h, f.n_exceed, f.error or ""]
                 for f in curve))


def read_curve_csv(path) -> list[LocalGpFit]:
    """Inverse of :func:`write_curve_csv` (thresholds per observation are not stored)."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows or set(CURVE_HEADER) - set(rows[0]):
        raise DataError(f"{path} is not a curve table")
    return [LocalGpFit(float(r["z"]), float(r["gamma_hat"]), float(r["a_hat"]), int(r["k"]),
                       float(r["h"]), int(r["n"]), float(r["n_exceed"]), math.nan,
                       threshold=float(r["threshold"]), error=r["error"] or None)
            for r in rows]


def cmd_extrapolate(curve, tau: float | None, config: RunConfig):
    """Extrapolated quantiles at exceedance probability ``tau`` along a curve.

    ``tau`` defaults to 11/n.  Grid points whose fit failed give NaN.
    """
    if not curve:
        return []
    n = curve[0].n
    tau = 11.0 / n if tau is None else float(tau)
    out = []
    for f in curve:
        if f.error is None and np.isfinite(f.threshold):
            out.append((f.z0, f.threshold, extrapolated_quantile(f, tau)))
        else:
            out.append((f.z0, f.threshold, math.nan))
    _write_rows(_out(config, "extrapolated.csv"), ["z", "threshold", "quantile"], out)
    if config.svg:
        _svg_line(_out(config, "extrapolated.svg"), [r[0] for r in out], [r[2] for r in out],
                  "index z", f"quantile at tau={tau:.3g}")
    return out


def cmd_simulate(spec_path, config: RunConfig, progress=None):
    """Run a simulation spec; writes ``metrics.csv`` and ``replications.csv``."""
    spec = SimulationSpec.from_file(spec_path)
    records = run_simulation(spec, n_jobs=config.n_jobs, progress=progress)
    report = aggregate(records, spec.reporting_size)
    report.to_csv(_out(config, "metrics.csv"))
    records_to_csv(records, _out(config, "replications.csv"))
    return report, records


def _svg_line(path, xs, ys, xlabel, ylabel) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(np.asarray(xs, dtype=float), np.asarray(ys, dtype=float), marker=".")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _svg_bars(path, values) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(np.arange(1, len(values) + 1), values)
    ax.set_xlabel("covariate")
    ax.set_ylabel("marginal utility")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
