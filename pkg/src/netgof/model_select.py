"""Model posterior over K, posterior probability of H0 and the Bayes factor."""
import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .vbem import Hyperparameters, ModelFit, VariationalState

logger = logging.getLogger(__name__)


def _as_map(bounds):
    if isinstance(bounds, dict):
        return {int(k): v for k, v in bounds.items()}
    return {k + 1: v for k, v in enumerate(bounds)}


def model_posterior(bounds, model_prior) -> dict:
    """p(M_K | Y) proportional to p(M_K) exp(L_K), normalised in log space.

    ``bounds`` maps K to the optimised bound (a sequence is read as K = 1, 2, ...).
    K values whose bound is missing or non-finite are dropped with a warning.
    """
    bounds = _as_map(bounds)
    prior = np.asarray(model_prior, dtype=float)
    ks, logw = [], []
    for K in sorted(bounds):
        b = bounds[K]
        if b is None or not np.isfinite(b):
            warnings.warn(f"dropping K={K}: no finite bound", RuntimeWarning, stacklevel=2)
            continue
        if K > len(prior):
            raise ValueError(f"no prior mass defined for K={K}")
        if prior[K - 1] <= 0:
            continue
        ks.append(K)
        logw.append(np.log(prior[K - 1]) + b)
    if not ks:
        raise ValueError("model posterior needs at least one finite bound")
    logw = np.asarray(logw)
    post = np.exp(logw - logsumexp(logw))
    out = {K: 0.0 for K in bounds}
    out.update({K: float(p) for K, p in zip(ks, post)})
    return out


def gof(posterior: dict, model_prior=None):
    """Return (p(H0 | Y), B01).

    The Bayes factor converts posterior odds to prior-free form using
    p(H0) = model_prior[0]; with equal priors on H0 and H1' it equals the
    posterior odds. p(H0 | Y) = 1 gives an infinite factor.
    """
    posterior = _as_map(posterior)
    p0 = float(posterior.get(1, 0.0))
    prior_h0 = 0.5 if model_prior is None else float(np.asarray(model_prior)[0])
    prior_h1 = 1.0 - prior_h0
    if p0 >= 1.0:
        warnings.warn("p(H0|Y) = 1: Bayes factor is infinite", RuntimeWarning, stacklevel=2)
        return p0, math.inf
    if prior_h1 <= 0:
        return p0, math.inf
    return p0, (p0 / (1.0 - p0)) * (prior_h1 / prior_h0)


@dataclass
class FitResult:
    bounds: dict
    posterior: dict
    p_H0: float
    bayes_factor_01: float
    hyper: Hyperparameters
    seeds: dict = field(default_factory=dict)
    states: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def bayes_factor_infinite(self) -> bool:
        return math.isinf(self.bayes_factor_01)

    def to_dict(self, include_states: bool = True):
        bf = self.bayes_factor_01
        out = {
            "bounds": {str(k): (v if v is not None and np.isfinite(v) else None)
                       for k, v in self.bounds.items()},
            "posterior": {str(k): v for k, v in self.posterior.items()},
            "p_H0": self.p_H0,
            "bayes_factor_01": "inf" if math.isinf(bf) else bf,
            "bayes_factor_infinite": math.isinf(bf),
            "hyper": self.hyper.to_dict(),
            "seeds": {str(k): v for k, v in self.seeds.items()},
        }
        if include_states:
            out["states"] = {str(k): s.to_dict() for k, s in self.states.items()}
        out.update(self.extra)
        return out

    @classmethod
    def from_dict(cls, d):
        try:
            bf = d["bayes_factor_01"]
            bf = math.inf if bf == "inf" else float(bf)
            known = {"bounds", "posterior", "p_H0", "bayes_factor_01", "bayes_factor_infinite",
                     "hyper", "seeds", "states"}
            return cls(
                bounds={int(k): (float(v) if v is not None else None) for k, v in d["bounds"].items()},
                posterior={int(k): float(v) for k, v in d["posterior"].items()},
                p_H0=float(d["p_H0"]),
                bayes_factor_01=bf,
                hyper=Hyperparameters.from_dict(d["hyper"]),
                seeds={int(k): v for k, v in d.get("seeds", {}).items()},
                states={int(k): VariationalState.from_dict(s) for k, s in d.get("states", {}).items()},
                extra={k: v for k, v in d.items() if k not in known},
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"corrupt fit result: {exc}") from exc

    def save(self, path, **extra):
        payload = self.to_dict()
        payload.update(extra)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1)

    @classmethod
    def load(cls, path) -> "FitResult":
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: corrupt fit result ({exc})") from exc
        return cls.from_dict(d)


def summarize(fit: ModelFit) -> FitResult:
    """Collapse per-K best runs into the goodness-of-fit summary."""
    hyper = fit.hyper
    bounds = {K: (fit.best[K].bound if K in fit.best else None)
              for K in range(1, hyper.k_max + 1)}
    if 1 not in fit.best:
        raise ValueError("the K=1 fit failed; p(H0|Y) is undefined")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        post = model_posterior(bounds, hyper.model_prior)
        p0, bf = gof(post, hyper.model_prior)
    for K in fit.failed:
        logger.warning("K=%d dropped from the model posterior (all restarts failed)", K)
    seeds = {K: fit.best[K].seed for K in fit.best}
    return FitResult(bounds, post, p0, bf, hyper, seeds, fit.states)
