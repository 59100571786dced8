from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq
from scipy.stats import norm

from evtscreen.core import Dataset
from evtscreen.errors import ConfigError, DomainError
from evtscreen.screening import minimum_model_size, screen
from evtscreen.simulation import (
    ReplicationRecord,
    SimulationSpec,
    aggregate,
    ar1_covariance,
    gamma_model,
    gen_covariates,
    generate,
    make_rng,
    response_from_uniform,
    run_replication,
    run_simulation,
    sample_response,
    survival,
)


def test_ar1_covariance_entry():
    assert ar1_covariance(5, 0.5)[0, 2] == 0.25
    assert ar1_covariance(5, 0.5)[3, 3] == 1.0


@pytest.mark.parametrize("r", [0.0, 0.5])
def test_covariates_are_rank_columns(r):
    x = gen_covariates(200, 6, r, make_rng(1))
    for j in range(6):
        np.testing.assert_allclose(np.sort(x[:, j]), np.arange(1, 201) / 200)


@pytest.mark.parametrize("r", [0.2, 0.5])
def test_adjacent_column_correlation(r):
    n = 2500
    x = gen_covariates(n, 4, r, make_rng(7))
    scores = norm.ppf(x - 0.5 / n)
    for j in range(3):
        assert abs(np.corrcoef(scores[:, j], scores[:, j + 1])[0, 1] - r) <= 0.05


def test_gamma_model_examples():
    x = np.zeros(12)
    assert gamma_model("a", x) == pytest.approx(0.3)
    assert gamma_model("b", x) == pytest.approx(0.3)
    assert gamma_model("c", x) == pytest.approx(0.3)
    assert gamma_model("d", x) == 0.0
    x[[0, 1, 2, 3]] = 0.25
    assert gamma_model("b", x) == pytest.approx(0.3 * np.exp(-2))
    with pytest.raises(DomainError):
        gamma_model("e", x)


def test_response_examples():
    assert response_from_uniform(1.0, 0.3, 0.5) == pytest.approx(0.5 ** 0.3)
    y = float(response_from_uniform(0.5, 0.3, 0.5))
    assert y == pytest.approx(2 ** 0.3, rel=1e-12)
    root = brentq(lambda v: survival(v, 0.3, 0.5) - 0.5, 0.5 ** 0.3, 100, xtol=1e-14)
    assert y == pytest.approx(root, rel=1e-10)
    with pytest.raises(DomainError):
        response_from_uniform(0.5, 0.0, 0.5)


@given(st.floats(0.05, 1.0), st.floats(0.05, 1.0), st.integers(0, 1000))
def test_inverse_cdf_round_trip(gamma, m, seed):
    u = np.random.default_rng(seed).uniform(size=500)
    y = response_from_uniform(u, gamma, m)
    assert np.all(y >= m ** gamma * (1 - 1e-12))
    assert np.max(np.abs(survival(y, gamma, m) - u)) < 1e-10


def test_sample_response_scalar_and_vector():
    rng = make_rng(3)
    assert isinstance(sample_response(0.3, 0.2, rng), float)
    assert sample_response(np.full(5, 0.3), 0.2, rng).shape == (5,)


def test_model_d_rejects_vanishing_gamma():
    x, y, g = generate("d", 300, 12, 0.5, 0.2, make_rng(9))
    assert np.all(g >= 1e-6) and np.all(y > 0)


def test_rng_substreams_are_deterministic():
    a = make_rng(5, 3).uniform(size=4)
    np.testing.assert_array_equal(a, make_rng(5, 3).uniform(size=4))
    assert not np.array_equal(a, make_rng(5, 4).uniform(size=4))


def test_spec_parsing(tmp_path):
    kv = tmp_path / "a.cfg"
    kv.write_text("model = b  # four actives\nn = 600\np = 20\nk = auto\nh = 0.2\ntable3_sets = 1, 4, true\n")
    spec = SimulationSpec.from_file(kv)
    assert (spec.model, spec.n, spec.p, spec.k, spec.h) == ("b", 600, 20, "auto", 0.2)
    assert spec.table3_sets == (1, 4, "true")
    js = tmp_path / "b.json"
    js.write_text(json.dumps({"model": "c", "n": 500, "p": 15, "table3": True}))
    assert SimulationSpec.from_file(js).table3
    with pytest.raises(ConfigError):
        SimulationSpec.from_text("bogus = 1")
    with pytest.raises(ConfigError):
        SimulationSpec.from_text("model = c\np = 5")
    with pytest.raises(ConfigError):
        SimulationSpec.from_text("k = lots")


def test_aggregate_examples():
    rep = aggregate([ReplicationRecord(i, S=1, tp_star=1.0, tp_double_star=1.0) for i in range(7)])
    assert rep.S_quantiles == (1.0,) * 5 and rep.P == 1.0
    rep = aggregate([ReplicationRecord(i, S=i + 1) for i in range(100)], reporting_size=50)
    assert rep.P == 0.5
    rep = aggregate([ReplicationRecord(0, S=1, tp_star=1.0), ReplicationRecord(1, S=2, tp_star=0.5)])
    assert rep.TP_star == 0.75
    single = aggregate([ReplicationRecord(0, S=17)])
    assert single.S_quantiles == (17.0,) * 5


@given(st.lists(st.integers(1, 100), min_size=1, max_size=40), st.lists(st.floats(0, 1), min_size=1, max_size=40))
def test_aggregate_invariants(svals, tps):
    recs = [ReplicationRecord(i, S=s, tp_star=tps[i % len(tps)], tp_double_star=tps[-1 - i % len(tps)])
            for i, s in enumerate(svals)]
    rep = aggregate(recs)
    assert np.all(np.diff(rep.S_quantiles) >= 0)
    for v in (rep.P, rep.TP_star, rep.TP_double_star):
        assert 0 <= v <= 1
    assert aggregate(list(reversed(recs))) == rep


def test_failed_replications_are_counted():
    recs = [ReplicationRecord(0, S=3), ReplicationRecord(1, error="FitFailed: x")]
    rep = aggregate(recs)
    assert rep.failures == 1 and rep.S_quantiles[2] == 3.0


TINY = dict(model="a", n=500, p=8, replications=2, q_cap=3, k=60, h=0.2, seed=11)


def test_replication_record_contents():
    rec = run_replication(SimulationSpec(**TINY), 0)
    assert rec.error is None
    assert 1 <= rec.S <= 8 and 1 <= rec.j_star <= 3 and 1 <= rec.j_double_star <= 3
    assert rec.tp_star in (0.0, 1.0)


def test_simulation_is_deterministic(tmp_path):
    spec = SimulationSpec(**TINY)
    a = aggregate(run_simulation(spec))
    b = aggregate(run_simulation(spec, n_jobs=2))
    assert a == b


def test_table3_mode_scores():
    spec = SimulationSpec(**{**TINY, "replications": 1, "table3": True, "table3_k": 60,
                             "table3_h": 0.3, "table3_sets": ("true", 8, "jstar")})
    rec = run_replication(spec, 0)
    assert rec.error is None
    assert set(rec.ase) == {"true", "8", "jstar"}
    assert all(v >= 0 for v in rec.ase.values())
    assert all(np.isfinite(v) for v in rec.loss.values())


@pytest.mark.slow
def test_model_a_is_easier_than_model_d():
    med = {}
    for model in ("a", "d"):
        s = []
        for rep in range(50):
            x, y, _ = generate(model, 1000, 20, 0.2, 0.2, make_rng(77, rep))
            s.append(minimum_model_size(screen(Dataset(y, x), 200, h=0.2).ranking,
                                        {"a": (0,), "d": (0, 1, 9, 10)}[model]))
        med[model] = np.median(s)
    assert med["a"] <= med["d"]
