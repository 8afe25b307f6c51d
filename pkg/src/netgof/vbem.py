"""Variational Bayes EM for logistic regression with a block-structured residual.

For a fixed number of blocks K the algorithm alternates three steps on the
doubly variational bound L_K(q; xi): a variational E step on the block
memberships, an M sweep over q(pi), q(gamma), q(eta), q(beta), q(alpha),
and the closed-form update of the local logistic bounds xi.

All pair sums run over ordered pairs i != j, with a factor 1/2 wherever an
unordered likelihood term is counted twice.
"""
import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.special import digamma, gammaln
from threadpoolctl import threadpool_limits

from .graph_core import Network

logger = logging.getLogger(__name__)

TAU_FLOOR = 1e-10
XI_SMALL = 1e-8
LOG_2PI = np.log(2.0 * np.pi)


class FitError(RuntimeError):
    """A run produced a non-finite bound or every restart for some K failed."""


@dataclass
class Hyperparameters:
    """Prior constants and the prior over the number of blocks."""

    a0: float = 1.0
    b0: float = 1.0
    c0: float = 1.0
    d0: float = 1.0
    e0: float = 1.0
    k_max: int = 10
    p_h0: float = 0.5
    prior: Optional[tuple] = None

    def __post_init__(self):
        for name in ("a0", "b0", "c0", "d0", "e0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        if self.prior is not None:
            p = np.asarray(self.prior, dtype=float)
            if p.shape != (self.k_max,) or np.any(p < 0) or not np.isclose(p.sum(), 1.0):
                raise ValueError("prior must be a probability vector of length k_max")
            self.prior = tuple(float(x) for x in p)

    @property
    def model_prior(self) -> np.ndarray:
        """p(M_K) for K = 1..k_max (index 0 is K = 1)."""
        if self.prior is not None:
            return np.array(self.prior)
        if self.k_max == 1:
            return np.ones(1)
        rest = (1.0 - self.p_h0) / (self.k_max - 1)
        return np.r_[self.p_h0, np.full(self.k_max - 1, rest)]

    def to_dict(self):
        return {"a0": self.a0, "b0": self.b0, "c0": self.c0, "d0": self.d0, "e0": self.e0,
                "k_max": self.k_max, "model_prior": self.model_prior.tolist()}

    @classmethod
    def from_dict(cls, d):
        prior = d.get("model_prior")
        return cls(d["a0"], d["b0"], d["c0"], d["d0"], d["e0"], int(d["k_max"]),
                   prior=tuple(prior) if prior is not None else None,
                   p_h0=float(prior[0]) if prior is not None and len(prior) > 1 else 0.5)


@dataclass
class VariationalState:
    """Parameters of every variational factor for one K, plus the xi matrix."""

    tau: np.ndarray
    e_n: np.ndarray
    m_beta: np.ndarray
    S_beta: np.ndarray
    a_n: float
    b_n: float
    c_n: float
    d_n: float
    m_alpha: np.ndarray
    sigma2_alpha: np.ndarray
    xi: np.ndarray
    # True only between a completed M sweep and the next E or xi step
    after_m_step: bool = field(default=False, compare=False)

    @property
    def K(self) -> int:
        return self.tau.shape[1]

    @property
    def alpha_second_moment(self) -> np.ndarray:
        return self.m_alpha ** 2 + self.sigma2_alpha

    def copy(self) -> "VariationalState":
        return replace(self, **{k: np.array(v) for k, v in vars(self).items()
                                if isinstance(v, np.ndarray)})

    def to_dict(self):
        out = {}
        for k, v in vars(self).items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    @classmethod
    def from_dict(cls, d):
        arrays = {"tau", "e_n", "m_beta", "S_beta", "m_alpha", "sigma2_alpha", "xi"}
        kw = {k: (np.asarray(v, dtype=float) if k in arrays else v) for k, v in d.items()}
        if kw["S_beta"].ndim != 2:
            kw["S_beta"] = kw["S_beta"].reshape(0, 0)
        return cls(**kw)


# ---------------------------------------------------------------------------
# logistic bound helpers


def lam(xi):
    """lambda(xi) = (g(xi) - 1/2) / (2 xi), with the limit 1/8 at 0."""
    xi = np.asarray(xi, dtype=float)
    if np.any(xi < 0):
        raise ValueError("lambda(xi) requires xi >= 0")
    small = xi < XI_SMALL
    safe = np.where(small, 1.0, xi)
    # (g(x) - 1/2) = tanh(x / 2) / 2
    out = np.where(small, 0.125, np.tanh(safe / 2.0) / (4.0 * safe))
    return out if out.ndim else float(out)


def log_logistic(x):
    return -np.logaddexp(0.0, -np.asarray(x, dtype=float))


def jaakkola_bound(x, xi):
    """Quadratic lower bound on log g(x), tight at x = +/- xi."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    return log_logistic(xi) + (x - xi) / 2.0 - lam(np.abs(xi)) * (x ** 2 - xi ** 2)


# ---------------------------------------------------------------------------
# cached per-network quantities


class _Data:
    """Network arrays reused by every update."""

    def __init__(self, network: Network):
        self.n = network.n
        self.d = network.d
        self.Y = network.adjacency
        self.X = network.covariates
        self.offdiag = ~np.eye(self.n, dtype=bool)
        Yc = self.Y - 0.5
        np.fill_diagonal(Yc, 0.0)
        self.Yc = Yc
        # sum_{i != j} (Y_ij - 1/2) x_ij
        self.yx = np.einsum("ij,ijk->k", Yc, self.X) if self.d else np.zeros(0)

    def lam_matrix(self, xi):
        L = lam(xi)
        L = np.array(L, dtype=float)
        np.fill_diagonal(L, 0.0)
        return L

    def xb(self, m_beta):
        if self.d == 0:
            return np.zeros((self.n, self.n))
        return self.X @ m_beta


def _data(network):
    return network if isinstance(network, _Data) else _Data(network)


# ---------------------------------------------------------------------------
# E step and M step updates


def e_step(state: VariationalState, network) -> np.ndarray:
    """Return updated memberships tau.

    Nodes are visited in turn, each q(Z_i) using the freshest values of the
    others; this makes the sweep a coordinate ascent on the bound.
    """
    data = _data(network)
    n, K = state.tau.shape
    if K == 1:
        return np.ones((n, 1))
    L = data.lam_matrix(state.xi)
    A = data.Yc - 2.0 * L * data.xb(state.m_beta)
    E2 = state.alpha_second_moment
    dig = digamma(state.e_n) - digamma(state.e_n.sum())
    tau = np.array(state.tau, dtype=float)
    m_alpha = state.m_alpha
    for i in range(n):
        s = m_alpha @ (A[i] @ tau) - E2 @ (L[i] @ tau) + dig
        s -= s.max()
        t = np.exp(s)
        t /= t.sum()
        if t.min() < TAU_FLOOR:
            t = np.maximum(t, TAU_FLOOR)
            t /= t.sum()
        tau[i] = t
    return tau


def update_pi(tau: np.ndarray, e0: float) -> np.ndarray:
    return e0 + tau.sum(axis=0)


def update_beta(state: VariationalState, network):
    """Gaussian factor of the regression coefficients: (m_beta, S_beta)."""
    data = _data(network)
    d = data.d
    if d == 0:
        return np.zeros(0), np.zeros((0, 0))
    L = data.lam_matrix(state.xi)
    X = data.X
    prec = (state.c_n / state.d_n) * np.eye(d) + np.einsum("ij,ijk,ijl->kl", L, X, X)
    prec = 0.5 * (prec + prec.T)
    Z = state.tau @ state.m_alpha @ state.tau.T
    W = data.Yc - 2.0 * L * Z
    np.fill_diagonal(W, 0.0)
    rhs = 0.5 * np.einsum("ij,ijk->k", W, X)
    S = np.linalg.inv(prec)
    S = 0.5 * (S + S.T)
    m = np.linalg.solve(prec, rhs)
    return m, S


def update_gamma(state: VariationalState, hyper: Hyperparameters):
    K = state.K
    a_n = hyper.a0 + K * (K + 1) / 4.0
    b_n = hyper.b0 + 0.5 * np.triu(state.alpha_second_moment).sum()
    return a_n, float(b_n)


def update_eta(state: VariationalState, hyper: Hyperparameters, d: int):
    c_n = hyper.c0 + d / 2.0
    if d == 0:
        return c_n, hyper.d0
    d_n = hyper.d0 + 0.5 * np.trace(state.S_beta) + 0.5 * state.m_beta @ state.m_beta
    return c_n, float(d_n)


def update_alpha(state: VariationalState, network):
    """Gaussian factors of the block effects: (m_alpha, sigma2_alpha)."""
    data = _data(network)
    tau = state.tau
    L = data.lam_matrix(state.xi)
    A = data.Yc - 2.0 * L * data.xb(state.m_beta)
    lt = tau.T @ L @ tau
    bt = tau.T @ A @ tau
    lt = 0.5 * (lt + lt.T)
    bt = 0.5 * (bt + bt.T)
    ridge = state.a_n / state.b_n
    K = state.K
    diag = np.eye(K, dtype=bool)
    prec = np.where(diag, ridge + lt, ridge + 2.0 * lt)
    sigma2 = 1.0 / prec
    m = np.where(diag, 0.5 * bt, bt) * sigma2
    return m, sigma2


def update_xi(state: VariationalState, network) -> np.ndarray:
    """Optimal local bound parameters given q."""
    data = _data(network)
    tau = state.tau
    rad = tau @ state.alpha_second_moment @ tau.T
    if data.d:
        Z = tau @ state.m_alpha @ tau.T
        rad = rad + 2.0 * Z * data.xb(state.m_beta)
        M2 = state.S_beta + np.outer(state.m_beta, state.m_beta)
        rad = rad + np.einsum("ijk,kl,ijl->ij", data.X, M2, data.X)
    if rad.min() < 0:
        if rad.min() < -1e-8:
            warnings.warn(f"negative xi radicand {rad.min():.3g} clamped to 0", RuntimeWarning,
                          stacklevel=2)
        rad = np.maximum(rad, 0.0)
    xi = np.sqrt(rad)
    return 0.5 * (xi + xi.T)


def m_step(state: VariationalState, network, hyper: Hyperparameters) -> VariationalState:
    """Run the M sweep in place: q(pi), q(gamma), q(eta), q(beta), q(alpha)."""
    data = _data(network)
    state.e_n = update_pi(state.tau, hyper.e0)
    state.a_n, state.b_n = update_gamma(state, hyper)
    state.c_n, state.d_n = update_eta(state, hyper, data.d)
    state.m_beta, state.S_beta = update_beta(state, data)
    state.m_alpha, state.sigma2_alpha = update_alpha(state, data)
    state.after_m_step = True
    return state


# ---------------------------------------------------------------------------
# lower bounds


def _log_dirichlet_norm(x):
    x = np.asarray(x, dtype=float)
    return gammaln(x).sum() - gammaln(x.sum())


def _tau_entropy(tau):
    t = np.clip(tau, 1e-300, 1.0)
    return float(-(tau * np.log(t)).sum())


def lower_bound(state: VariationalState, network, hyper: Hyperparameters) -> float:
    """Closed-form L_K(q; xi), valid only right after an M sweep."""
    if not state.after_m_step:
        raise RuntimeError("lower_bound must be evaluated right after a full M sweep")
    data = _data(network)
    K = state.K
    xi = state.xi[data.offdiag]
    L = lam(xi)
    val = 0.5 * np.sum(log_logistic(xi) - xi / 2.0 + L * xi ** 2)
    val += _log_dirichlet_norm(state.e_n) - _log_dirichlet_norm(np.full(K, hyper.e0))
    val += gammaln(state.a_n) - gammaln(hyper.a0)
    val += gammaln(state.c_n) - gammaln(hyper.c0)
    val += hyper.a0 * np.log(hyper.b0) + state.a_n * (1.0 - hyper.b0 / state.b_n - np.log(state.b_n))
    val += hyper.c0 * np.log(hyper.d0) + state.c_n * (1.0 - hyper.d0 / state.d_n - np.log(state.d_n))
    upper = np.triu(np.ones((K, K), dtype=bool))
    s2 = state.sigma2_alpha[upper]
    val += 0.5 * np.sum(np.log(s2))
    val += _tau_entropy(state.tau)
    val += 0.5 * np.sum(state.m_alpha[upper] ** 2 / s2)
    if data.d:
        sign, logdet = np.linalg.slogdet(state.S_beta)
        val += 0.5 * logdet
        m = state.m_beta
        val -= 0.5 * m @ np.linalg.solve(state.S_beta, m)
        val += 0.5 * m @ data.yx
    return float(val)


def elbo_full(state: VariationalState, network, hyper: Hyperparameters) -> float:
    """L_K(q; xi) from its definition, with no optimality assumptions.

    Expected log joint (with the quadratic logistic bound) minus the
    expected log of every variational factor. Agrees with ``lower_bound``
    right after an M sweep and is valid at any point of the iteration.
    """
    data = _data(network)
    tau, K, d = state.tau, state.K, data.d
    off = data.offdiag
    xi = state.xi
    Lm = data.lam_matrix(xi)
    Z = tau @ state.m_alpha @ tau.T
    E2 = tau @ state.alpha_second_moment @ tau.T
    es = Z + data.xb(state.m_beta)
    es2 = E2 + 2.0 * Z * data.xb(state.m_beta)
    if d:
        M2 = state.S_beta + np.outer(state.m_beta, state.m_beta)
        es2 = es2 + np.einsum("ijk,kl,ijl->ij", data.X, M2, data.X)
    pair = data.Yc * es + log_logistic(xi) - xi / 2.0 - Lm * (es2 - xi ** 2)
    val = 0.5 * pair[off].sum()

    # memberships and proportions
    e0 = np.full(K, hyper.e0)
    elog_pi = digamma(state.e_n) - digamma(state.e_n.sum())
    val += tau.sum(axis=0) @ elog_pi
    val += (e0 - 1.0) @ elog_pi - _log_dirichlet_norm(e0)
    val -= (state.e_n - 1.0) @ elog_pi - _log_dirichlet_norm(state.e_n)
    val += _tau_entropy(tau)

    # block effects and their precision
    upper = np.triu(np.ones((K, K), dtype=bool))
    n_alpha = upper.sum()
    e_g = state.a_n / state.b_n
    elog_g = digamma(state.a_n) - np.log(state.b_n)
    val += -0.5 * n_alpha * LOG_2PI + 0.5 * n_alpha * elog_g \
        - 0.5 * e_g * state.alpha_second_moment[upper].sum()
    val += hyper.a0 * np.log(hyper.b0) - gammaln(hyper.a0) + (hyper.a0 - 1) * elog_g - hyper.b0 * e_g
    val -= state.a_n * np.log(state.b_n) - gammaln(state.a_n) + (state.a_n - 1) * elog_g - state.b_n * e_g
    val += 0.5 * np.sum(LOG_2PI + np.log(state.sigma2_alpha[upper]) + 1.0)

    # regression coefficients and their precision
    if d:
        e_h = state.c_n / state.d_n
        elog_h = digamma(state.c_n) - np.log(state.d_n)
        val += -0.5 * d * LOG_2PI + 0.5 * d * elog_h \
            - 0.5 * e_h * (state.m_beta @ state.m_beta + np.trace(state.S_beta))
        val += hyper.c0 * np.log(hyper.d0) - gammaln(hyper.c0) + (hyper.c0 - 1) * elog_h - hyper.d0 * e_h
        val -= state.c_n * np.log(state.d_n) - gammaln(state.c_n) + (state.c_n - 1) * elog_h \
            - state.d_n * e_h
        val += 0.5 * (d * (LOG_2PI + 1.0) + np.linalg.slogdet(state.S_beta)[1])
    return float(val)


# ---------------------------------------------------------------------------
# initialisation and single runs


def seed_for(master_seed: int, *path: int) -> int:
    """Derive a 32-bit seed from a master seed and an index path."""
    ss = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFF, *[int(p) for p in path]])
    return int(ss.generate_state(1)[0])


def kmeans_tau(network: Network, K: int, seed: int) -> np.ndarray:
    """Hard memberships from k-means on degree-normalised adjacency rows."""
    n = network.n
    tau = np.zeros((n, K))
    if K == 1:
        return np.ones((n, 1))
    rng = np.random.default_rng(seed)
    if K >= n:
        labels = rng.permutation(np.arange(n) % K)
    else:
        Y = network.adjacency
        deg = Y.sum(axis=1, keepdims=True)
        rows = Y / np.where(deg > 0, deg, 1.0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _, labels = kmeans2(rows, K, minit="++", seed=rng)
    tau[np.arange(n), labels] = 1.0
    tau = np.maximum(tau, TAU_FLOOR)
    return tau / tau.sum(axis=1, keepdims=True)


def perturb_tau(tau: np.ndarray, seed: int, rate: float = 0.3) -> np.ndarray:
    rng = np.random.default_rng(seed)
    noise = rng.dirichlet(np.ones(tau.shape[1]), size=tau.shape[0])
    out = (1.0 - rate) * tau + rate * noise
    return out / out.sum(axis=1, keepdims=True)


def initial_state(tau: np.ndarray, network: Network, hyper: Hyperparameters) -> VariationalState:
    """Prior-like factors around the given memberships, with matching xi."""
    n, K = tau.shape
    d = network.d
    state = VariationalState(
        tau=tau,
        e_n=update_pi(tau, hyper.e0),
        m_beta=np.zeros(d),
        S_beta=np.eye(d),
        a_n=hyper.a0 + K * (K + 1) / 4.0,
        b_n=hyper.b0,
        c_n=hyper.c0 + d / 2.0,
        d_n=hyper.d0,
        m_alpha=np.zeros((K, K)),
        sigma2_alpha=np.ones((K, K)),
        xi=np.ones((n, n)),
    )
    state.xi = update_xi(state, network)
    return state


@dataclass
class SingleFit:
    K: int
    seed: int
    state: VariationalState
    bound: float
    trace: list
    n_iter: int
    converged: bool
    runtime_s: float


def fit_single(network: Network, K: int, hyper: Hyperparameters, init_seed: int = 0,
               tol: float = 1e-6, max_iter: int = 500, init_tau: Optional[np.ndarray] = None,
               restart: int = 0) -> SingleFit:
    """Fit M_K once from one initialisation.

    Each iteration runs E step, M sweep, records the bound, then updates xi.
    The E step is skipped on the first pass so the initial memberships feed
    the first M sweep directly.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    t0 = time.perf_counter()
    data = _Data(network)
    if init_tau is None:
        init_tau = kmeans_tau(network, K, init_seed)
        if restart > 0:
            init_tau = perturb_tau(init_tau, seed_for(init_seed, restart))
    state = initial_state(np.array(init_tau, dtype=float), network, hyper)
    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if it > 1:
            state.tau = e_step(state, data)
            state.after_m_step = False
        m_step(state, data, hyper)
        bound = lower_bound(state, data, hyper)
        if not np.isfinite(bound):
            raise FitError(f"non-finite lower bound for K={K} (seed {init_seed}) at iteration {it}")
        trace.append(bound)
        state.xi = update_xi(state, data)
        state.after_m_step = False
        if it > 1 and abs(trace[-1] - trace[-2]) / (1.0 + abs(trace[-1])) < tol:
            converged = True
            break
    return SingleFit(K, init_seed, state, trace[-1], trace, it, converged,
                     time.perf_counter() - t0)


def _run_task(args):
    network, K, hyper, seed, restart, tol, max_iter = args
    with threadpool_limits(limits=1):
        try:
            return fit_single(network, K, hyper, seed, tol, max_iter, restart=restart)
        except (FitError, np.linalg.LinAlgError, FloatingPointError) as exc:
            return exc


@dataclass
class ModelFit:
    """Best run per K plus bookkeeping for every (K, restart)."""

    best: dict  # K -> SingleFit
    runs: dict  # (K, restart) -> SingleFit or exception
    seeds: dict  # (K, restart) -> int
    hyper: Hyperparameters
    master_seed: int

    @property
    def bounds(self):
        return {K: f.bound for K, f in self.best.items()}

    @property
    def states(self):
        return {K: f.state for K, f in self.best.items()}

    @property
    def runtimes(self):
        return {key: (r.runtime_s if isinstance(r, SingleFit) else None) for key, r in self.runs.items()}

    @property
    def failed(self):
        return sorted({K for K in range(1, self.hyper.k_max + 1) if K not in self.best})


def fit_model(network: Network, hyper: Hyperparameters, n_restarts: int = 2, seed: int = 0,
              tol: float = 1e-6, max_iter: int = 500, threads: int = 1,
              k_values=None, strict: bool = True) -> ModelFit:
    """Fit every K in 1..k_max with ``n_restarts`` runs each, keeping the best.

    Seeds depend only on (seed, K, restart), so results do not depend on the
    number of worker processes.
    """
    if n_restarts < 1:
        raise ValueError("n_restarts must be >= 1")
    ks = list(k_values) if k_values is not None else list(range(1, hyper.k_max + 1))
    tasks, keys, seeds = [], [], {}
    for K in ks:
        base = seed_for(seed, K)
        for r in range(n_restarts):
            seeds[(K, r)] = base
            keys.append((K, r))
            tasks.append((network, K, hyper, base, r, tol, max_iter))
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]
    runs = dict(zip(keys, results))
    best = {}
    for (K, r), res in runs.items():
        if isinstance(res, Exception):
            logger.warning("K=%d restart %d failed: %s", K, r, res)
            continue
        if K not in best or res.bound > best[K].bound:
            best[K] = res
    missing = [K for K in ks if K not in best]
    if missing and strict:
        raise FitError(f"all restarts failed for K={missing}")
    return ModelFit(best, runs, seeds, hyper, seed)
