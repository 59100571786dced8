"""Acceptance suite: one recorded pass/fail line per criterion.

The simulation criteria run full desk-scale experiments and take a long time
on a single core; worker processes default to the CPU count and can be set
with ``EVTSCREEN_JOBS``.
"""
from __future__ import annotations

import itertools
import math
import os
import time

import numpy as np
import pytest
from scipy.stats import genpareto

from evtscreen.core import Dataset, l_gamma
from evtscreen.errors import DataError, EmptyNeighborhood
from evtscreen.evi import aux_scale, pickands_conditional, pickands_unconditional
from evtscreen.gp import LocalGpFit, extrapolated_quantile, fit_gp_local, gp_log_density
from evtscreen.kernels import EPANECHNIKOV, GAUSSIAN, KernelConditional, conditional_quantile
from evtscreen.simulation import (
    SimulationSpec,
    aggregate,
    response_from_uniform,
    run_simulation,
    survival,
)
from evtscreen.tail_quantreg import fit_tail_quantreg, single_index_direction
from evtscreen.tuning import discrepancy_unconditional, exceedance_uniforms, discrepancy_from_uniforms

JOBS = int(os.environ.get("EVTSCREEN_JOBS", os.cpu_count() or 1))
SEED = 20240601


def _sim(**kw):
    spec = SimulationSpec(seed=SEED, **kw)
    return aggregate(run_simulation(spec, n_jobs=JOBS), spec.reporting_size)


@pytest.mark.slow
def test_criterion_1_model_a_screening(acceptance_report):
    t0 = time.time()
    rep = _sim(model="a", n=2500, p=100, r=0.2, m=0.2, replications=100)
    s5, s25, s50 = rep.S_quantiles[:3]
    ok = (s5, s25, s50) == (1, 1, 1) and rep.TP_star >= 0.95 and rep.TP_double_star >= 0.95
    acceptance_report(1, ok, f"S 5/25/50% = {s5:g}/{s25:g}/{s50:g}, TP*={rep.TP_star:.3f}, "
                             f"TP**={rep.TP_double_star:.3f}, failures={rep.failures}, "
                             f"{time.time() - t0:.0f}s on {JOBS} workers")
    assert ok


@pytest.mark.slow
def test_criterion_2_model_b_screening(acceptance_report):
    rep = _sim(model="b", n=2500, p=100, r=0.2, m=0.2, replications=50)
    s25, s50 = rep.S_quantiles[1:3]
    gap = rep.TP_double_star - rep.TP_star
    ok = s25 == 4 and s50 <= 10 and gap >= 0.2
    acceptance_report(2, ok, f"S 25%={s25:g}, median={s50:g}, TP*={rep.TP_star:.3f}, "
                             f"TP**={rep.TP_double_star:.3f}, gap={gap:.3f}, failures={rep.failures}")
    assert ok


@pytest.mark.slow
def test_criterion_3_index_fit_accuracy(acceptance_report):
    rep = _sim(model="a", n=2500, p=40, r=0.5, m=0.5, replications=50, select=False,
               table3=True, table3_k=400, table3_h=0.3, table3_sets=("true", 40))
    true_med, all_med = rep.ase["true"][0], rep.ase["40"][0]
    ok = 0.008 <= true_med <= 0.035 and all_med > true_med
    acceptance_report(3, ok, f"median ASE true set={true_med:.4f}, all 40={all_med:.4f}, "
                             f"failures={rep.failures}")
    assert ok


def test_criterion_4_gp_recovery(acceptance_report):
    details, ok = [], True
    for gamma in (-0.2, 0.0, 0.3, 0.7):
        e = genpareto.rvs(gamma, scale=1.0, size=5000, random_state=101)
        filler = 15001
        y = np.r_[e + 10.0, np.full(filler, 1.0)]
        thr = np.r_[np.full(5000, 10.0), np.full(filler, 5.0)]
        t0 = time.time()
        fit = fit_gp_local(y, np.zeros(y.size), 0.0, 4000, EPANECHNIKOV, 1.0, thresholds=thr)
        dt = time.time() - t0
        good = abs(fit.gamma_hat - gamma) <= 0.05 and dt < 5.0
        ok &= good
        details.append(f"gamma={gamma:+.1f}: est {fit.gamma_hat:+.4f} in {dt:.2f}s")
    acceptance_report(4, ok, "; ".join(details))
    assert ok


def _brute_force_check_loss(y, x, s):
    """Minimum over all fits interpolating q+1 observations (an optimal
    vertex of the check-loss linear program is always among them)."""
    n, q = x.shape
    d = np.hstack([np.ones((n, 1)), x])
    tau = 1 - 1 / s
    subsets = np.array(list(itertools.combinations(range(n), q + 1)))
    a = d[subsets]
    keep = np.abs(np.linalg.det(a)) > 1e-12
    coef = np.linalg.solve(a[keep], y[subsets[keep]][..., None])[..., 0]
    r = y[None, :] - coef @ d.T
    return float(np.min(np.sum(r * (tau - (r < 0)), axis=1)))


def test_criterion_5_oracle_equivalence(acceptance_report):
    worst = 0.0
    for seed in range(20):
        gen = np.random.default_rng(1000 + seed)
        q = 1 + seed % 2
        x = gen.uniform(size=(50, q))
        y = 1 + x @ gen.normal(size=q) + gen.pareto(2.5, size=50)
        got = fit_tail_quantreg(y, x, 5.0).objective
        ref = _brute_force_check_loss(y, x, 5.0)
        worst = max(worst, abs(got - ref) / abs(ref))
    mismatches = 0
    for seed in range(50):
        gen = np.random.default_rng(2000 + seed)
        n = int(gen.integers(5, 40))
        x = gen.integers(0, 15, size=n) / 14
        y = gen.integers(1, 25, size=n).astype(float)
        spec = (EPANECHNIKOV, GAUSSIAN)[seed % 2]
        h, t = (0.15, 0.3, 0.6)[seed % 3], float(gen.uniform(1.1, 15))
        loo = KernelConditional(x, y, spec, h).quantiles(x, [t], loo=np.arange(n))[:, 0]
        for i in range(n):
            keep = np.arange(n) != i
            try:
                ref = conditional_quantile(x[keep], y[keep], x[i], t, spec, h)
            except EmptyNeighborhood:
                mismatches += not math.isnan(loo[i])
                continue
            mismatches += loo[i] != ref
    ok = worst <= 1e-4 and mismatches == 0
    acceptance_report(5, ok, f"max relative objective gap {worst:.2e} over 20 instances; "
                             f"{mismatches} leave-one-out mismatches over 50 instances")
    assert ok


def test_criterion_6_inverse_cdf(acceptance_report):
    worst = 0.0
    gen = np.random.default_rng(6)
    for gamma, m in itertools.product((0.2, 0.3), (0.2, 0.5)):
        u = gen.uniform(size=10_000)
        y = response_from_uniform(u, gamma, m)
        worst = max(worst, float(np.max(np.abs(survival(y, gamma, m) - u))))
    ok = worst < 1e-10
    acceptance_report(6, ok, f"max |(1-F(y)) - u| = {worst:.2e} over 4 x 10^4 draws")
    assert ok


def test_criterion_7_property_suites(acceptance_report):
    gen = np.random.default_rng(7)
    failures = []

    crossings = 0
    for _ in range(30):
        x = gen.uniform(size=300)
        y = gen.pareto(2.0, size=300) + 1
        kc = KernelConditional(x, y, EPANECHNIKOV, 0.2)
        ts = np.sort(gen.uniform(1.01, 100, size=6))
        q = kc.quantiles(np.linspace(0.1, 0.9, 9), ts)
        crossings += int(np.sum(np.diff(q, axis=1) < 0))
    if crossings:
        failures.append(f"{crossings} quantile crossings")

    for _ in range(20):
        y = gen.pareto(3.0, size=2000) + 1
        x = gen.uniform(size=2000)
        a, b = gen.uniform(0.1, 10), gen.uniform(-5, 5)
        g0 = pickands_unconditional(y, 200).gamma_hat
        g1 = pickands_unconditional(a * y + b, 200).gamma_hat
        c0 = pickands_conditional(x, y, 0.5, 100, EPANECHNIKOV, 0.3).gamma_hat
        c1 = pickands_conditional(x, a * y + b, 0.5, 100, EPANECHNIKOV, 0.3).gamma_hat
        if abs(g0 - g1) > 1e-9 or abs(c0 - c1) > 1e-9:
            failures.append("Pickands location-scale")
            break

    for _ in range(20):
        q = int(gen.integers(1, 5))
        x = gen.uniform(size=(200, q))
        y = np.exp(x @ gen.normal(size=q)) * (gen.pareto(3.0, size=200) + 1)
        alpha = single_index_direction(fit_tail_quantreg(y, x, 10.0)).alpha
        if abs(np.linalg.norm(alpha) - 1) > 1e-12:
            failures.append("unit norm")
            break

    for _ in range(20):
        y = gen.pareto(float(gen.uniform(1, 5)), size=500) + 1
        qv = discrepancy_unconditional(y, int(gen.integers(20, 120)))
        v = exceedance_uniforms(gen.exponential(size=50), float(gen.uniform(-0.5, 1)), 1.0)
        qw = discrepancy_from_uniforms(v)
        if not (0 <= qv <= 1 and 0 <= qw <= 1):
            failures.append("discrepancy range")
            break

    for t in (0.5, 2.0, 50.0):
        lim = float(l_gamma(t, 0.0))
        for g in (1e-6, -1e-6):
            if abs(float(l_gamma(t, g)) - lim) > 1e-5:
                failures.append("l_gamma continuity")
    for yv, sig in ((0.5, 1.0), (5.0, 2.0), (15.0, 7.0)):
        lim = gp_log_density(yv, 0.0, sig)
        for g in (1e-6, -1e-6):
            if abs(gp_log_density(yv, g, sig) - lim) > 1e-4 * max(1.0, abs(lim)):
                failures.append("gp_log_density continuity")
    base = dict(z0=0.5, a_hat=1.5, k=100, h=0.2, n=2000, n_exceed=50.0, loglik=0.0, threshold=4.0)
    lim = extrapolated_quantile(LocalGpFit(gamma_hat=0.0, **base), 0.001)
    for g in (1e-6, -1e-6):
        if abs(extrapolated_quantile(LocalGpFit(gamma_hat=g, **base), 0.001) - lim) > 1e-4 * abs(lim):
            failures.append("extrapolated_quantile continuity")
    y = gen.pareto(3.0, size=2000) + 1
    lim = aux_scale(y, 200, 0.0)
    for g in (1e-6, -1e-6):
        if abs(aux_scale(y, 200, g) - lim) > 1e-5 * abs(lim):
            failures.append("aux_scale continuity")

    ok = not failures
    acceptance_report(7, ok, "non-crossing, location-scale, unit norm, discrepancy range and "
                             "gamma->0 continuity checks" + ("" if ok else f" failed: {failures}"))
    assert ok


@pytest.mark.network
def test_criterion_8_crime_data(acceptance_report, tmp_path):
    from evtscreen.cli import DEMO_RESPONSE, fetch_demo_data
    from evtscreen.pipeline import IngestPolicy, ingest_csv
    from evtscreen.screening import screen
    from evtscreen.tuning import screening_bandwidth, select_k, select_model_size

    try:
        path = fetch_demo_data(str(tmp_path / "crime.csv"))
    except DataError as exc:
        acceptance_report(8, None, f"optional, network unavailable: {exc}")
        pytest.skip("crime data not reachable")
    data, _ = ingest_csv(path, IngestPolicy(DEMO_RESPONSE, drop_nonpositive_response=True))
    k, _ = select_k(data.y)
    gamma0 = pickands_unconditional(data.y, k).gamma_hat
    h = screening_bandwidth(data, k)
    res = screen(data, k, h=h)
    j1, j2, _ = select_model_size(data, res, 50)
    top7 = {data.names[c] for c in res.ranking[:7]}
    wanted = {"PctKidsBornNeverMar", "PctUsePubTrans", "racePctWhite", "PctKids2Par"}
    ok = 0.40 <= gamma0 <= 0.62 and j1 == j2 and 3 <= j1 <= 6 and wanted <= top7
    acceptance_report(8, ok, f"k={k} gamma0={gamma0:.3f} j*={j1} j**={j2} top7={sorted(top7)}")
    assert ok
