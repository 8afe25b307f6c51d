"""Model-averaged estimate of the residual structure phi on [0, 1]^2.

Under M_K the residual is blockwise constant, block k covering
[sigma_{k-1}, sigma_k) with sigma_k the cumulative sums of pi ~ Dir(e).
Averaging over q(pi) turns the block surface into
    sum_{k<=l} m_alpha[k, l] * P(u in block k, v in block l),
the probabilities being rectangle differences of the joint cdf F_{k,l}
of (sigma_k, sigma_l). The cdf is estimated from one shared set of
Dirichlet draws per K.
"""
import csv
import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import expit
from scipy.stats import beta as beta_dist

from .vbem import VariationalState, seed_for

DEFAULT_MC_SAMPLES = 100_000
DEFAULT_RESOLUTION = 101


class DirichletStick:
    """Shared draws of the cumulative sums sigma_0 = 0, ..., sigma_K = 1."""

    def __init__(self, e, n_samples: int = DEFAULT_MC_SAMPLES, seed: int = 0):
        if n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        e = np.asarray(e, dtype=float)
        if e.ndim != 1 or np.any(e <= 0):
            raise ValueError("e must be a positive vector")
        self.e = e
        self.K = len(e)
        self.n_samples = int(n_samples)
        rng = np.random.default_rng(seed)
        pi = rng.dirichlet(e, size=self.n_samples)
        sig = np.zeros((self.n_samples, self.K + 1))
        sig[:, 1:] = np.cumsum(pi, axis=1)
        sig[:, self.K] = 1.0
        self.sigma = sig

    def cdf(self, k: int, l: int, u: float, v: float) -> float:
        """P(sigma_k <= u, sigma_l <= v)."""
        if not (0 <= k <= self.K and 0 <= l <= self.K):
            raise ValueError(f"block indices must lie in 0..{self.K}")
        hit = (self.sigma[:, k] <= u) & (self.sigma[:, l] <= v)
        return float(hit.mean())

    def cdf_grid(self, k: int, l: int, grid) -> np.ndarray:
        """P(sigma_k <= grid[i], sigma_l <= grid[j]) for every (i, j)."""
        grid = np.asarray(grid, dtype=float)
        G = len(grid)
        # sigma <= grid[i]  iff  i >= searchsorted(grid, sigma, 'left')
        ia = np.searchsorted(grid, self.sigma[:, k], side="left")
        ib = np.searchsorted(grid, self.sigma[:, l], side="left")
        hist = np.bincount(ia * (G + 1) + ib, minlength=(G + 1) ** 2).reshape(G + 1, G + 1)
        F = hist.cumsum(axis=0).cumsum(axis=1)[:G, :G]
        return F / self.n_samples


@lru_cache(maxsize=16)
def _stick(e: tuple, n_samples: int, seed: int) -> DirichletStick:
    return DirichletStick(np.asarray(e), n_samples, seed)


def dirichlet_joint_cdf(k, l, u, v, e, n_samples=DEFAULT_MC_SAMPLES, seed=0) -> float:
    """Monte Carlo P(sigma_k <= u, sigma_l <= v) for pi ~ Dir(e).

    Repeated calls with the same (e, n_samples, seed) reuse one sample set.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    return _stick(tuple(float(x) for x in e), int(n_samples), int(seed)).cdf(k, l, u, v)


def dirichlet_joint_cdf_exact(k, l, u, v, e) -> float:
    """Exact joint cdf for K <= 2 (sigma_1 ~ Beta(e_1, e_2) when K = 2)."""
    e = np.asarray(e, dtype=float)
    K = len(e)
    if K > 2:
        raise ValueError("exact joint cdf is only available for K <= 2")
    prob = 1.0
    thresholds = []
    for idx, x in ((k, u), (l, v)):
        if idx == 0:
            prob *= float(x >= 0)
        elif idx == K:
            prob *= float(x >= 1)
        else:
            thresholds.append(x)
    if thresholds and prob:
        prob *= float(beta_dist.cdf(min(thresholds), e[0], e[1]))
    return prob


def block_weights(F):
    """Rectangle weights P(u in block k, v in block l) for k <= l (1-based).

    ``F(a, b)`` returns the joint cdf for indices 0..K. The last block is
    closed on the right so that u = 1 belongs to block K: terms with index
    K are taken as 0, which only differs from the literal cdf at u or v = 1.
    """
    K = F.K
    cache = {}

    def Ft(a, b):
        if (a, b) not in cache:
            cache[(a, b)] = 0.0 if (a == K or b == K) else F(a, b)
        return cache[(a, b)]

    out = {}
    for k in range(1, K + 1):
        for l in range(k, K + 1):
            out[(k, l)] = Ft(k - 1, l - 1) - Ft(k, l - 1) - Ft(k - 1, l) + Ft(k, l)
    return out


class _PointCdf:
    def __init__(self, stick, u, v):
        self.K, self.stick, self.u, self.v = stick.K, stick, u, v

    def __call__(self, a, b):
        return self.stick.cdf(a, b, self.u, self.v)


class _GridCdf:
    def __init__(self, stick, grid):
        self.K, self.stick, self.grid = stick.K, stick, grid

    def __call__(self, a, b):
        return self.stick.cdf_grid(a, b, self.grid)


class _ExactCdf:
    def __init__(self, e, u, v):
        self.K, self.e, self.u, self.v = len(e), e, u, v

    def __call__(self, a, b):
        return dirichlet_joint_cdf_exact(a, b, self.u, self.v, self.e)


def identifiability_order(state: VariationalState) -> VariationalState:
    """Permute blocks so the expected-pi-weighted row means of m_alpha increase.

    Ties are broken by ascending e_n.
    """
    w = state.e_n / state.e_n.sum()
    means = state.m_alpha @ w
    perm = np.lexsort((state.e_n, means))
    out = state.copy()
    out.tau = state.tau[:, perm]
    out.e_n = state.e_n[perm]
    out.m_alpha = state.m_alpha[np.ix_(perm, perm)]
    out.sigma2_alpha = state.sigma2_alpha[np.ix_(perm, perm)]
    return out


def weighted_row_means(state: VariationalState) -> np.ndarray:
    return state.m_alpha @ (state.e_n / state.e_n.sum())


def _concentration(state, prior_e):
    if prior_e is None:
        return np.asarray(state.e_n, dtype=float)
    return np.full(state.K, float(prior_e))


def conditional_phi_at(u, v, state: VariationalState, stick=None, exact=False, prior_e=None) -> float:
    """E[phi(u, v) | Y, M_K] for one fitted state."""
    if u > v:
        u, v = v, u
    e = _concentration(state, prior_e)
    if exact:
        F = _ExactCdf(e, u, v)
    else:
        F = _PointCdf(stick, u, v)
    w = block_weights(F)
    return float(sum(state.m_alpha[k - 1, l - 1] * wt for (k, l), wt in w.items()))


def residual_phi_at(u, v, states: dict, posterior: dict, n_samples=DEFAULT_MC_SAMPLES, seed=0,
                    prior_e=None, order=True, exact=False) -> float:
    """Model-averaged posterior mean of phi(u, v).

    ``states`` maps K to fitted states, ``posterior`` maps K to p(M_K | Y).
    ``prior_e`` switches the cdf concentration from e_n to the prior e0.
    """
    total = 0.0
    for K, p in posterior.items():
        if p <= 0 or K not in states:
            continue
        st = identifiability_order(states[K]) if order else states[K]
        stick = None
        if not exact:
            e = _concentration(st, prior_e)
            stick = _stick(tuple(float(x) for x in e), int(n_samples), seed_for(seed, K))
        total += p * conditional_phi_at(u, v, st, stick, exact, prior_e)
    return total


def grid_coordinates(resolution: int) -> np.ndarray:
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    return np.linspace(0.0, 1.0, resolution) if resolution > 1 else np.zeros(1)


def conditional_phi_grid(state: VariationalState, grid, stick: DirichletStick) -> np.ndarray:
    w = block_weights(_GridCdf(stick, grid))
    phi = np.zeros((len(grid), len(grid)))
    for (k, l), wt in w.items():
        phi += state.m_alpha[k - 1, l - 1] * wt
    # entries with u <= v are valid; mirror the upper triangle
    upper = np.triu(phi)
    return upper + np.triu(phi, 1).T


@dataclass
class GraphonGrid:
    resolution: int
    u: np.ndarray
    phi_hat: np.ndarray
    g_phi_hat: np.ndarray

    def to_dict(self):
        return {"resolution": self.resolution, "u": self.u.tolist(),
                "phi": self.phi_hat.tolist(), "g_phi": self.g_phi_hat.tolist()}

    def write_json(self, path, **extra):
        payload = self.to_dict()
        payload.update(extra)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["u", "v", "phi", "g_phi"])
            for i, ui in enumerate(self.u):
                for j, vj in enumerate(self.u):
                    w.writerow([repr(float(ui)), repr(float(vj)),
                                repr(float(self.phi_hat[i, j])), repr(float(self.g_phi_hat[i, j]))])

    @classmethod
    def read_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        phi = np.asarray(d["phi"])
        return cls(int(d["resolution"]), np.asarray(d["u"]), phi, np.asarray(d["g_phi"]))


def export_grid(fit, resolution=DEFAULT_RESOLUTION, n_samples=DEFAULT_MC_SAMPLES, seed=0,
                prior_e=None, order=True) -> GraphonGrid:
    """Evaluate the model-averaged residual on a regular grid.

    ``fit`` is a FitResult (or anything with ``states`` and ``posterior``).
    """
    grid = grid_coordinates(resolution)
    phi = np.zeros((len(grid), len(grid)))
    for K, p in sorted(fit.posterior.items()):
        if p <= 0 or K not in fit.states:
            continue
        st = identifiability_order(fit.states[K]) if order else fit.states[K]
        e = _concentration(st, prior_e)
        stick = DirichletStick(e, n_samples, seed_for(seed, K))
        phi += p * conditional_phi_grid(st, grid, stick)
    return GraphonGrid(resolution, grid, phi, expit(phi))
