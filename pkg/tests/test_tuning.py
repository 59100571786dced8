from __future__ import annotations

import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import genpareto

from evtscreen import tuning
from evtscreen.core import Dataset
from evtscreen.errors import NoExceedances, NoFeasibleBandwidth, NoFeasibleK, SelectionFailed
from evtscreen.gp import fit_gp_local, loo_thresholds
from evtscreen.kernels import EPANECHNIKOV
from evtscreen.screening import screen
from evtscreen.simulation import generate, make_rng
from evtscreen.tail_quantreg import check_loss
from evtscreen.tuning import (
    _selectors,
    bandwidth_cv,
    default_k_grid,
    discrepancy_conditional,
    discrepancy_from_uniforms,
    discrepancy_unconditional,
    exceedance_uniforms,
    select_k,
    select_model_size,
    tune_gp,
)


def test_discrepancy_arithmetic():
    assert discrepancy_from_uniforms(np.arange(1, 8) / 8) == 0.0
    assert discrepancy_from_uniforms([1.0]) == 0.25
    with pytest.raises(NoExceedances):
        discrepancy_from_uniforms([])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=200))
def test_discrepancy_in_unit_interval(v):
    assert 0 <= discrepancy_from_uniforms(v) <= 1


@given(st.lists(st.floats(0, 1e3), min_size=1, max_size=50), st.floats(-2, 2), st.floats(0.01, 10))
def test_discrepancy_of_any_fit_in_unit_interval(e, g, a):
    assert 0 <= discrepancy_from_uniforms(exceedance_uniforms(e, g, a)) <= 1


def test_exceedance_uniforms_branches():
    assert exceedance_uniforms([2.0], 0.0, 1.0)[0] == pytest.approx(math.exp(-2))
    assert exceedance_uniforms([3.0], -0.5, 1.0)[0] == 0.0
    np.testing.assert_allclose(exceedance_uniforms([1.0, 4.0], 0.5, 2.0), genpareto.sf([1.0, 4.0], 0.5, scale=2.0))


def test_known_parameters_give_small_discrepancy():
    e = genpareto.rvs(0.3, scale=2.0, size=5000, random_state=3)
    assert discrepancy_from_uniforms(exceedance_uniforms(e, 0.3, 2.0)) < 0.005


def test_unconditional_location_scale():
    # Location-scale change of y moves the threshold and scale with it.
    y = genpareto.rvs(0.3, size=2000, random_state=8) + 1
    base = discrepancy_unconditional(y, 200)
    assert discrepancy_unconditional(3 * y + 7, 200) == pytest.approx(base, abs=1e-12)


@pytest.mark.xfail(strict=True, reason=(
    "the discrepancy of a well-specified fit shrinks like 1/n_T, so on unit Frechet "
    "data the grid maximum n/5 itself is the minimizer in about 4 of 10 seeds"))
def test_select_k_beats_largest_k_on_frechet():
    wins = 0
    for seed in range(10):
        y = 1 / -np.log(np.random.default_rng(seed).uniform(size=5000))
        k, trace = select_k(y)
        q_big = discrepancy_unconditional(y, int(math.ceil(5000 / 5)))
        wins += trace.discrepancy[trace.k_grid.index(k)] < q_big
        # The reported choice attains the recorded minimum.
    assert wins >= 9


def test_select_k_attains_recorded_minimum():
    for seed in range(5):
        y = 1 / -np.log(np.random.default_rng(seed).uniform(size=5000))
        k, trace = select_k(y)
        assert k in trace.k_grid
        assert discrepancy_unconditional(y, k) == np.nanmin(trace.discrepancy)


def test_select_k_single_and_tie(monkeypatch):
    y = np.random.default_rng(0).pareto(2.0, size=400) + 1
    assert select_k(y, [37])[0] == 37
    monkeypatch.setattr(tuning, "discrepancy_unconditional", lambda y, k: 0.125)
    assert select_k(y, [20, 10])[0] == 10


def test_select_k_all_degenerate():
    with pytest.raises(NoFeasibleK):
        select_k(np.ones(200), [10, 20])


def test_default_k_grid():
    grid = default_k_grid(2500)
    assert grid[0] == 25 and grid[-1] == 500 and np.all(np.diff(grid) > 0)
    assert len(default_k_grid(2500)) <= 25


def test_bandwidth_cv_examples():
    gen = np.random.default_rng(1)
    x, y = gen.uniform(size=300), gen.pareto(2.0, size=300) + 1
    assert bandwidth_cv(x, y, 10, [0.3])[0] == 0.3
    assert bandwidth_cv(x, y, 10, [0.3, 0.1, 0.3, 0.1])[0] == bandwidth_cv(x, y, 10, [0.1, 0.3])[0]
    with pytest.raises(NoFeasibleBandwidth):
        bandwidth_cv(np.arange(20.0), np.arange(1.0, 21), 2, [0.1, 0.5])


def test_bandwidth_cv_attains_recorded_minimum():
    gen = np.random.default_rng(2)
    x = gen.uniform(size=400)
    y = gen.uniform(size=400) ** -(0.1 + 0.5 * x)
    h, trace = bandwidth_cv(x, y, 8, tuning.DEFAULT_H_GRID)
    i = trace.h_grid.index(h)
    assert trace.cv_loss[i] == np.nanmin(trace.cv_loss)
    from evtscreen.kernels import KernelConditional

    q = KernelConditional(x, y, EPANECHNIKOV, h).quantiles(x, [8], loo=np.arange(400))[:, 0]
    assert np.mean(check_loss(y - q, 8)) == trace.cv_loss[i]


def test_bandwidth_cv_oversmooths_under_independence():
    picks = []
    for seed in range(30):
        gen = np.random.default_rng(100 + seed)
        x, y = gen.uniform(size=2000), gen.pareto(3.0, size=2000) + 1
        picks.append(bandwidth_cv(x, y, 5, [0.1, 0.9])[0])
    assert np.mean(np.array(picks) == 0.9) >= 0.9


def test_selectors_arithmetic():
    assert _selectors([0.3, 0.1, 0.4, 0.45])[:2] == (2, 2)
    assert _selectors([np.nan, 0.1, 0.4, np.nan, 0.2])[:2] == (2, 2)
    assert _selectors([0.2]) == (1, 1, False)
    with pytest.raises(SelectionFailed):
        _selectors([np.nan, np.nan])


def test_conditional_constant_index_reduces_to_single_fit():
    gen = np.random.default_rng(4)
    y = gen.uniform(size=1500) ** -0.3
    z = np.zeros(1500)
    q = discrepancy_conditional(y, z, 150, EPANECHNIKOV, 0.5)
    thr = loo_thresholds(y, z, 150, EPANECHNIKOV, 0.5)
    fit = fit_gp_local(y, z, 0.0, 150, EPANECHNIKOV, 0.5, thresholds=thr)
    exc = y > thr
    ref = discrepancy_from_uniforms(exceedance_uniforms(y[exc] - thr[exc], fit.gamma_hat, fit.a_hat))
    assert q == ref


def test_conditional_single_exceedance_arithmetic():
    assert discrepancy_from_uniforms(exceedance_uniforms([0.0], 0.2, 1.0)) == 0.25


@pytest.fixture(scope="module")
def small_design():
    x, y, _ = generate("a", 1200, 8, 0.2, 0.2, make_rng(3, 0))
    data = Dataset(y, x)
    return data, screen(data, 150, h=0.2)


def test_select_model_size_qcap_one(small_design):
    data, res = small_design
    j1, j2, trace = select_model_size(data, res, q_cap=1)
    assert (j1, j2) == (1, 1) and not trace.j_double_star_defined


def test_select_model_size_trace(small_design, tmp_path):
    data, res = small_design
    j1, j2, trace = select_model_size(data, res, q_cap=4)
    assert trace.sizes == [1, 2, 3, 4]
    q = np.array(trace.size_discrepancy)
    assert 1 <= j1 <= 4 and 1 <= j2 <= 4
    assert q[j1 - 1] == np.nanmin(q)
    assert np.all((q[np.isfinite(q)] >= 0) & (q[np.isfinite(q)] <= 1))
    trace.to_csv(tmp_path / "t.csv")
    rows = list(csv.DictReader(open(tmp_path / "t.csv")))
    got = [float(r["value"]) for r in rows if r["criterion"] == "discrepancy_size"]
    np.testing.assert_array_equal(got, q)


def test_tune_gp_two_stage(small_design):
    data, _ = small_design
    z = data.x[:, 0]
    k, h, trace = tune_gp(data.y, z, [100, 200], [0.2, 0.4])
    i = trace.k_grid.index(k)
    assert trace.discrepancy[i] == np.nanmin(trace.discrepancy)
    assert h == trace.h_by_k[i] and h in (0.2, 0.4)
    assert bandwidth_cv(z, data.y, data.n / k, [0.2, 0.4])[0] == h
