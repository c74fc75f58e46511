"""Univariate Gaussian mixture EM.

Used to produce the starting responsibilities for SEM and as the Gaussian
benchmark.  Initialisation is deterministic: centers at the k
quantiles ``(j - 1/2) / k`` of the data, equal weights, and the pooled
within-group variance of the nearest-center assignment.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .exceptions import DegenerateDataError

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    pi: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        pi, mu, sigma = (np.array(v, dtype=float).ravel() for v in (self.pi, self.mu, self.sigma))
        if not (pi.size == mu.size == sigma.size) or pi.size == 0:
            raise ValueError("pi, mu and sigma must have the same nonzero length")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-10:
            raise ValueError("pi must lie on the simplex")
        if np.any(sigma <= 0):
            raise ValueError("sigma must be positive")
        for name, v in (("pi", pi), ("mu", mu), ("sigma", sigma)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @property
    def k(self):
        return self.pi.size

    def canonical_order(self):
        return sorted(range(self.k), key=lambda j: (self.mu[j], self.pi[j]))

    def permuted(self, order):
        order = list(order)
        return GaussianMixture(self.pi[order], self.mu[order], self.sigma[order])


class GmmFit(NamedTuple):
    model: GaussianMixture
    responsibilities: np.ndarray
    loglik: float
    history: tuple
    n_iter: int
    converged: bool


def _log_joint(pi, mu, sigma, x):
    z = (x[:, None] - mu[None, :]) / sigma[None, :]
    with np.errstate(divide="ignore"):
        return np.log(pi)[None, :] - np.log(sigma)[None, :] - _LOG_SQRT_2PI - 0.5 * z * z


def gmm_log_likelihood(m, data):
    x = np.asarray(data, dtype=float).ravel()
    return float(np.sum(logsumexp(_log_joint(m.pi, m.mu, m.sigma, x), axis=1)))


def gmm_posteriors(m, data):
    x = np.asarray(data, dtype=float).ravel()
    lj = _log_joint(m.pi, m.mu, m.sigma, x)
    return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))


def quantile_init(x, k, var_floor):
    """Quantile centers, equal weights, pooled nearest-center variance."""
    mu = np.quantile(x, (np.arange(k) + 0.5) / k)
    nearest = np.argmin(np.abs(x[:, None] - mu[None, :]), axis=1)
    pooled = np.mean((x - mu[nearest]) ** 2)
    sigma = np.full(k, math.sqrt(max(pooled, var_floor)))
    return GaussianMixture(np.full(k, 1.0 / k), mu, sigma)


VARIANCE_MODES = ("free", "equal")


def fit_gmm(data, k, seed=0, max_iter=1000, tol=1e-10, variance="free"):
    """Fit a k-component univariate Gaussian mixture by EM.

    ``variance`` is "free" (one variance per component) or "equal" (a
    single pooled variance).  ``seed`` is accepted for interface stability;
    the quantile initialisation makes the fit deterministic without it.
    Stops when the log-likelihood changes by at most ``tol * (1 + |L|)``.
    """
    del seed
    if variance not in VARIANCE_MODES:
        raise ValueError(f"variance must be one of {VARIANCE_MODES}")
    x = np.asarray(data, dtype=float).ravel()
    n = x.size
    if k < 1:
        raise ValueError("k must be at least 1")
    if n < 2 * k:
        raise ValueError(f"need at least {2 * k} points for k={k}, got {n}")
    var = float(np.var(x))
    if not var > 0:
        raise DegenerateDataError("all data points are equal")
    var_floor = 1e-6 * var

    m = quantile_init(x, k, var_floor)
    pi, mu, sigma = m.pi.copy(), m.mu.copy(), m.sigma.copy()
    lj = _log_joint(pi, mu, sigma, x)
    lse = logsumexp(lj, axis=1)
    loglik = float(lse.sum())
    history = [loglik]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = np.exp(lj - lse[:, None])
        nk = w.sum(axis=0)
        pi = nk / n
        mu = (w * x[:, None]).sum(axis=0) / nk
        ss = (w * (x[:, None] - mu[None, :]) ** 2).sum(axis=0)
        v = ss / nk if variance == "free" else np.full(k, ss.sum() / n)
        sigma = np.sqrt(np.maximum(v, var_floor))
        lj = _log_joint(pi, mu, sigma, x)
        lse = logsumexp(lj, axis=1)
        new = float(lse.sum())
        history.append(new)
        done = abs(new - loglik) <= tol * (1.0 + abs(loglik))
        loglik = new
        if done:
            converged = True
            break

    model = GaussianMixture(pi / pi.sum(), mu, sigma)
    order = model.canonical_order()
    resp = np.exp(lj - lse[:, None])[:, order]
    return GmmFit(model.permuted(order), resp, loglik, tuple(history), it, converged)
