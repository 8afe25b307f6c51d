import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netgof.model_select import FitResult, gof, model_posterior, summarize
from netgof.vbem import Hyperparameters, fit_model

from conftest import random_network

bounds_st = st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=8)


def _prior(k):
    return Hyperparameters(k_max=k).model_prior


def test_equal_bounds():
    post = model_posterior([3.2, 3.2], [0.5, 0.5])
    assert post[1] == pytest.approx(0.5, abs=1e-15) and post[2] == pytest.approx(0.5, abs=1e-15)


def test_direct_normalization():
    post = model_posterior([0.0, math.log(3)], [0.5, 0.5])
    assert post[1] == pytest.approx(0.25, abs=1e-15)
    assert post[2] == pytest.approx(0.75, abs=1e-15)


def test_large_gap_no_overflow():
    post = model_posterior({1: -5000.0, 2: -4000.0}, [0.5, 0.5])
    assert post[1] == 0.0
    assert post[2] == 1.0


def test_all_infinite_raises():
    with pytest.warns(RuntimeWarning):
        with pytest.raises(ValueError):
            model_posterior([-np.inf, -np.inf], [0.5, 0.5])


def test_failed_k_dropped():
    with pytest.warns(RuntimeWarning, match="K=2"):
        post = model_posterior({1: -10.0, 2: None, 3: -10.0}, [0.5, 0.25, 0.25])
    assert post[2] == 0.0
    assert post[1] == pytest.approx(2 / 3)


@given(bounds_st, st.floats(-1e3, 1e3))
def test_shift_invariance(bounds, c):
    p = _prior(len(bounds))
    a = model_posterior(bounds, p)
    b = model_posterior([x + c for x in bounds], p)
    assert sum(a.values()) == pytest.approx(1.0, abs=1e-12)
    for K in a:
        assert a[K] == pytest.approx(b[K], abs=1e-9)


@given(bounds_st, st.floats(0, 50))
@settings(max_examples=200)
def test_monotone_in_first_bound(bounds, delta):
    p = _prior(len(bounds))
    lo = model_posterior(bounds, p)[1]
    hi = model_posterior([bounds[0] + delta] + bounds[1:], p)[1]
    assert hi >= lo - 1e-15


def test_shift_by_1000_exact():
    rng = np.random.default_rng(1)
    b = rng.normal(-300, 20, size=10)
    p = _prior(10)
    a = model_posterior(b, p)
    s = model_posterior(b + 1000, p)
    assert max(abs(a[K] - s[K]) for K in a) < 1e-12


def test_gof_values():
    assert gof({1: 0.5, 2: 0.5}) == (0.5, 1.0)
    p, bf = gof({1: 0.995, 2: 0.005})
    assert bf == pytest.approx(199.0, rel=1e-12)
    assert gof({1: 0.0, 2: 1.0}) == (0.0, 0.0)


def test_gof_unequal_prior():
    # posterior odds 3, prior odds p(H0)/p(H1') = 1/4 -> B01 = 12
    _, bf = gof({1: 0.75, 2: 0.25}, [0.2, 0.8])
    assert bf == pytest.approx(12.0)


def test_gof_infinite():
    with pytest.warns(RuntimeWarning):
        p, bf = gof({1: 1.0, 2: 0.0})
    assert p == 1.0 and math.isinf(bf)


def _result(tmp_path=None):
    net = random_network(12, 0.3, d=1, seed=2)
    return summarize(fit_model(net, Hyperparameters(k_max=3), n_restarts=1, seed=4))


def test_summarize_invariants():
    r = _result()
    assert sum(r.posterior.values()) == pytest.approx(1.0)
    assert r.p_H0 == r.posterior[1]
    assert r.bayes_factor_01 == pytest.approx(r.p_H0 / (1 - r.p_H0))


def test_json_round_trip(tmp_path):
    r = _result()
    path = tmp_path / "fit.json"
    r.save(path, note="x")
    back = FitResult.load(path)
    assert back.bounds == r.bounds
    assert back.posterior == r.posterior
    assert back.p_H0 == r.p_H0
    assert back.hyper.to_dict() == r.hyper.to_dict()
    assert back.extra["note"] == "x"
    for K, s in r.states.items():
        np.testing.assert_array_equal(back.states[K].m_alpha, s.m_alpha)
        np.testing.assert_array_equal(back.states[K].tau, s.tau)


def test_infinite_bayes_factor_serialised(tmp_path):
    r = _result()
    r.bayes_factor_01 = math.inf
    d = json.loads(json.dumps(r.to_dict()))
    assert d["bayes_factor_01"] == "inf" and d["bayes_factor_infinite"]
    assert FitResult.from_dict(d).bayes_factor_infinite


def test_corrupt_result(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ValueError, match="corrupt"):
        FitResult.load(p)
    p.write_text(json.dumps({"bounds": {}}))
    with pytest.raises(ValueError, match="corrupt"):
        FitResult.load(p)
