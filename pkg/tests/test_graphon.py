import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit
from scipy.stats import beta as beta_dist

from netgof.graphon import (
    DirichletStick,
    GraphonGrid,
    block_weights,
    conditional_phi_at,
    dirichlet_joint_cdf,
    dirichlet_joint_cdf_exact,
    export_grid,
    grid_coordinates,
    identifiability_order,
    residual_phi_at,
    weighted_row_means,
    _PointCdf,
)
from netgof.model_select import FitResult
from netgof.vbem import Hyperparameters, VariationalState


def make_state(m_alpha, e_n, n=4, seed=0):
    m_alpha = np.asarray(m_alpha, float)
    K = m_alpha.shape[0]
    tau = np.random.default_rng(seed).dirichlet(np.ones(K), size=n)
    return VariationalState(tau=tau, e_n=np.asarray(e_n, float), m_beta=np.zeros(0),
                            S_beta=np.zeros((0, 0)), a_n=1.0, b_n=1.0, c_n=1.0, d_n=1.0,
                            m_alpha=m_alpha, sigma2_alpha=np.full((K, K), 0.1),
                            xi=np.ones((n, n)))


def fake_fit(states, posterior):
    return FitResult(bounds={K: 0.0 for K in posterior}, posterior=posterior,
                     p_H0=posterior.get(1, 0.0), bayes_factor_01=1.0,
                     hyper=Hyperparameters(k_max=max(posterior)), states=states)


M2 = [[-1.0, 0.5], [0.5, 2.0]]


# -- joint cdf -------------------------------------------------------------------


def test_cdf_k0_convention():
    e = (2.0, 3.0, 1.5)
    stick = DirichletStick(e, 20000, seed=1)
    for u in (0.0, 0.4, 1.0):
        assert stick.cdf(0, 1, u, 0.3) == stick.cdf(1, 1, 1.0, 0.3)
    # sigma_1 ~ Beta(e1, e2 + e3)
    se = math.sqrt(0.25 / 20000)
    assert abs(stick.cdf(0, 1, 0.5, 0.3) - beta_dist.cdf(0.3, 2.0, 4.5)) < 4 * se


def test_cdf_unit_square_is_one():
    stick = DirichletStick((0.5, 1.0, 2.0), 5000, seed=0)
    for k in range(4):
        for l in range(k, 4):
            assert stick.cdf(k, l, 1.0, 1.0) == 1.0


def test_cdf_uniform_stick_within_3se():
    n = 100_000
    est = dirichlet_joint_cdf(1, 1, 0.5, 0.5, (1.0, 1.0), n_samples=n, seed=0)
    assert abs(est - 0.5) < 3 * math.sqrt(0.25 / n)


def test_cdf_bad_samples():
    with pytest.raises(ValueError):
        dirichlet_joint_cdf(1, 1, 0.5, 0.5, (1.0, 1.0), n_samples=0)


@pytest.mark.parametrize("e", [(1.0, 1.0), (0.7, 3.0), (12.0, 5.0)])
def test_exact_matches_monte_carlo(e):
    n = 50_000
    stick = DirichletStick(e, n, seed=3)
    rng = np.random.default_rng(0)
    for _ in range(10):
        u, v = np.sort(rng.random(2))
        for k, l in [(0, 1), (1, 1), (1, 2), (0, 2)]:
            exact = dirichlet_joint_cdf_exact(k, l, u, v, e)
            se = math.sqrt(max(exact * (1 - exact), 1e-6) / n)
            assert abs(stick.cdf(k, l, u, v) - exact) < 4.5 * se + 1e-12


def test_cdf_grid_matches_pointwise():
    stick = DirichletStick((1.0, 2.0, 0.5), 3000, seed=4)
    grid = grid_coordinates(9)
    G = stick.cdf_grid(1, 2, grid)
    for i, u in enumerate(grid):
        for j, v in enumerate(grid):
            assert G[i, j] == pytest.approx(stick.cdf(1, 2, u, v), abs=1e-15)


# -- conditional and averaged surfaces --------------------------------------------


def test_single_block_constant():
    st_ = make_state([[0.7]], [5.0])
    for u, v in [(0, 0), (0.2, 0.9), (1, 1), (0.5, 0.5)]:
        assert residual_phi_at(u, v, {1: st_}, {1: 1.0}, n_samples=1000) == pytest.approx(0.7)


def linear_oracle(u, v, m):
    # sigma_1 ~ U(0, 1): P(both in 1) = 1 - v, P(split) = v - u, P(both in 2) = u
    u, v = min(u, v), max(u, v)
    return m[0][0] * (1 - v) + m[0][1] * (v - u) + m[1][1] * u


@pytest.mark.parametrize("u,v", [(0.1, 0.2), (0.3, 0.8), (0.5, 0.5), (0.0, 1.0), (0.9, 0.4), (1.0, 1.0)])
def test_two_blocks_uniform_stick_exact(u, v):
    st_ = make_state(M2, [1.0, 1.0])
    got = residual_phi_at(u, v, {2: st_}, {2: 1.0}, exact=True, order=False)
    assert got == pytest.approx(linear_oracle(u, v, M2), abs=1e-14)


def test_two_blocks_uniform_stick_mc():
    st_ = make_state(M2, [1.0, 1.0])
    for u, v in [(0.2, 0.6), (0.45, 0.55), (0.7, 0.9)]:
        got = residual_phi_at(u, v, {2: st_}, {2: 1.0}, n_samples=100_000, order=False)
        assert got == pytest.approx(linear_oracle(u, v, M2), abs=0.02)


def test_two_blocks_concentrated_stick_is_step():
    st_ = make_state(M2, [5000.0, 5000.0])
    for (u, v), want in [((0.1, 0.3), -1.0), ((0.2, 0.8), 0.5), ((0.7, 0.95), 2.0)]:
        assert residual_phi_at(u, v, {2: st_}, {2: 1.0}, exact=True, order=False) == pytest.approx(want, abs=1e-9)
        assert residual_phi_at(u, v, {2: st_}, {2: 1.0}, n_samples=20_000, order=False) == pytest.approx(want, abs=1e-9)


def test_symmetric():
    st_ = make_state([[0.1, 0.4, -0.2], [0.4, 1.0, 0.3], [-0.2, 0.3, 2.0]], [2.0, 1.0, 3.0])
    for u, v in [(0.1, 0.7), (0.33, 0.5)]:
        a = residual_phi_at(u, v, {3: st_}, {3: 1.0}, n_samples=5000)
        b = residual_phi_at(v, u, {3: st_}, {3: 1.0}, n_samples=5000)
        assert a == b


def test_model_average_linear():
    s1 = make_state([[0.3]], [4.0])
    s2 = make_state(M2, [1.0, 1.0])
    got = residual_phi_at(0.2, 0.6, {1: s1, 2: s2}, {1: 0.25, 2: 0.75}, exact=True, order=False)
    assert got == pytest.approx(0.25 * 0.3 + 0.75 * linear_oracle(0.2, 0.6, M2), abs=1e-14)


@given(st.integers(1, 5), st.floats(0, 1), st.floats(0, 1), st.floats(-5, 5), st.integers(0, 100))
@settings(max_examples=40, deadline=None)
def test_constant_alpha_telescopes(K, u, v, c, seed):
    e = np.random.default_rng(seed).uniform(0.3, 4, size=K)
    stick = DirichletStick(e, 500, seed=seed)
    st_ = make_state(np.full((K, K), c), e)
    assert conditional_phi_at(u, v, st_, stick) == pytest.approx(c, abs=1e-12)


def test_weights_sum_to_one_at_corner():
    stick = DirichletStick((1.0, 2.0, 3.0), 2000, seed=0)
    w = block_weights(_PointCdf(stick, 1.0, 1.0))
    assert sum(w.values()) == pytest.approx(1.0, abs=1e-15)
    assert w[(3, 3)] == 1.0


def test_prior_e_flag():
    # with the prior concentration e = 1 the K = 2 stick is uniform whatever e_n says
    st_ = make_state(M2, [30.0, 2.0])
    got = residual_phi_at(0.2, 0.6, {2: st_}, {2: 1.0}, exact=True, order=False, prior_e=1.0)
    assert got == pytest.approx(linear_oracle(0.2, 0.6, M2), abs=1e-14)


# -- ordering ------------------------------------------------------------------------


def test_order_identity_for_one_block():
    s = make_state([[0.4]], [3.0])
    o = identifiability_order(s)
    np.testing.assert_array_equal(o.m_alpha, s.m_alpha)
    np.testing.assert_array_equal(o.tau, s.tau)


def test_order_swaps_blocks():
    s = make_state([[0.4, 0.2], [0.2, -0.4]], [1.0, 1.0])
    np.testing.assert_allclose(weighted_row_means(s), [0.3, -0.1])
    o = identifiability_order(s)
    np.testing.assert_allclose(o.m_alpha, [[-0.4, 0.2], [0.2, 0.4]])
    np.testing.assert_array_equal(o.tau, s.tau[:, ::-1])


def test_order_ties_by_e():
    s = make_state([[0.5, 0.5], [0.5, 0.5]], [3.0, 1.0])
    assert weighted_row_means(s)[0] == weighted_row_means(s)[1]
    o = identifiability_order(s)
    np.testing.assert_array_equal(o.e_n, [1.0, 3.0])


@given(st.integers(1, 6), st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_order_property(K, seed):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(K, K))
    s = make_state(m + m.T, rng.uniform(0.5, 5, size=K), n=5, seed=seed)
    o = identifiability_order(s)
    assert np.all(np.diff(weighted_row_means(o)) >= -1e-12)
    oo = identifiability_order(o)
    np.testing.assert_array_equal(oo.m_alpha, o.m_alpha)
    np.testing.assert_array_equal(oo.e_n, o.e_n)


# -- grid export -----------------------------------------------------------------------


def _two_model_fit():
    s1 = make_state([[-0.5]], [6.0])
    s3 = make_state([[0.1, 0.4, -0.2], [0.4, 1.0, 0.3], [-0.2, 0.3, 2.0]], [2.0, 1.0, 3.0])
    return fake_fit({1: s1, 3: s3}, {1: 0.4, 3: 0.6})


def test_grid_matches_pointwise():
    fit = _two_model_fit()
    g = export_grid(fit, resolution=6, n_samples=4000, seed=2)
    for i, u in enumerate(g.u):
        for j, v in enumerate(g.u):
            want = residual_phi_at(u, v, fit.states, fit.posterior, n_samples=4000, seed=2)
            assert g.phi_hat[i, j] == pytest.approx(want, abs=1e-12)
    np.testing.assert_array_equal(g.phi_hat, g.phi_hat.T)
    np.testing.assert_array_equal(g.g_phi_hat, expit(g.phi_hat))


def test_grid_single_point():
    fit = _two_model_fit()
    g = export_grid(fit, resolution=1, n_samples=2000)
    assert g.phi_hat.shape == (1, 1)
    want = residual_phi_at(0.0, 0.0, fit.states, fit.posterior, n_samples=2000)
    assert g.g_phi_hat[0, 0] == pytest.approx(expit(want), abs=1e-14)


def test_grid_reproducible(tmp_path):
    fit = _two_model_fit()
    a = export_grid(fit, resolution=7, n_samples=3000, seed=5)
    b = export_grid(fit, resolution=7, n_samples=3000, seed=5)
    assert a.phi_hat.tobytes() == b.phi_hat.tobytes()
    a.write_csv(tmp_path / "a.csv")
    b.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_grid_json_round_trip(tmp_path):
    g = export_grid(_two_model_fit(), resolution=5, n_samples=1000)
    g.write_json(tmp_path / "g.json")
    back = GraphonGrid.read_json(tmp_path / "g.json")
    np.testing.assert_array_equal(back.phi_hat, g.phi_hat)
    np.testing.assert_array_equal(back.u, g.u)
    g.write_csv(tmp_path / "g.csv")
    rows = (tmp_path / "g.csv").read_text().splitlines()
    assert rows[0] == "u,v,phi,g_phi" and len(rows) == 26


def test_grid_resolution_error():
    with pytest.raises(ValueError):
        grid_coordinates(0)
