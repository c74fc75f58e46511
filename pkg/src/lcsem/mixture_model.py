"""Location mixtures of symmetric log-concave densities.

A component is a half-density ``h`` on [0, inf) reflected about its center:
``f(x) = h(|x - mu|) / 2``.  All arithmetic is done on the log scale with
``-inf`` standing for zero density, which is routine here because every
fitted component has compact support.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .exceptions import ZeroDensityError
from .shape_mle import LOG_ZERO, MonotoneLogConcaveFit, log_density

LOG2 = math.log(2.0)


@dataclass(frozen=True, eq=False)
class SymmetricComponent:
    center: float
    half_density: MonotoneLogConcaveFit

    @property
    def support(self):
        r = self.half_density.support_max
        return self.center - r, self.center + r

    def log_density(self, x):
        return component_log_density(self, x)


@dataclass(frozen=True, eq=False)
class MixtureModel:
    """Weights ``pi`` on the simplex and one symmetric component per weight.

    Fitted models are returned in canonical order (ascending center); the
    constructor itself accepts any order so that relabelled copies can be
    built.
    """

    pi: np.ndarray
    components: tuple

    def __post_init__(self):
        pi = np.array(self.pi, dtype=float).ravel()
        comps = tuple(self.components)
        if pi.size == 0 or pi.size != len(comps):
            raise ValueError("need one weight per component")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must lie on the simplex")
        pi.setflags(write=False)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "components", comps)

    @property
    def k(self):
        return len(self.components)

    @property
    def centers(self):
        return np.array([c.center for c in self.components])

    def permuted(self, order):
        order = list(order)
        return MixtureModel(self.pi[order], tuple(self.components[j] for j in order))

    def canonical_order(self):
        """Permutation sorting components by center, ties broken by weight."""
        return sorted(range(self.k), key=lambda j: (self.components[j].center, self.pi[j]))

    def canonical(self):
        return self.permuted(self.canonical_order())


def component_log_density(c, x):
    """``log h(|x - mu|) - log 2``, ``-inf`` outside the support."""
    x = np.asarray(x, dtype=float)
    return log_density(c.half_density, np.abs(x - c.center)) - LOG2


def log_joint(m, data):
    """n x k matrix of ``log(pi_j f_j(x_i - mu_j))``."""
    data = np.asarray(data, dtype=float).ravel()
    with np.errstate(divide="ignore"):
        logpi = np.log(m.pi)
    cols = [component_log_density(c, data) + lp for c, lp in zip(m.components, logpi)]
    return np.column_stack(cols)


def mixture_log_density(m, x):
    x = np.asarray(x, dtype=float)
    out = logsumexp(log_joint(m, x.ravel()), axis=1).reshape(x.shape)
    return float(out) if out.ndim == 0 else out


def mixture_density(m, x):
    """Mixture density ``g(x)``, evaluated through log-sum-exp."""
    return np.exp(mixture_log_density(m, x))


def log_likelihood(m, data):
    """Sum of log mixture densities; ``-inf`` if any point has zero density."""
    data = np.asarray(data, dtype=float).ravel()
    if data.size == 0:
        raise ValueError("data must be nonempty")
    return float(np.sum(mixture_log_density(m, data)))


def posterior_weights(m, data):
    """Responsibilities ``w_ij``; raises ZeroDensityError on unsupported points."""
    lj = log_joint(m, data)
    lse = logsumexp(lj, axis=1)
    bad = np.flatnonzero(~np.isfinite(lse))
    if bad.size:
        raise ZeroDensityError(
            f"{bad.size} point(s) outside every component support, first at index {bad[0]}")
    return np.exp(lj - lse[:, None])


def check_responsibilities(w, n=None, k=None, atol=1e-10):
    """Validate an n x k row-stochastic matrix and return it as an array."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 2:
        raise ValueError("responsibilities must be a 2-d array")
    if n is not None and w.shape[0] != n or k is not None and w.shape[1] != k:
        raise ValueError(f"expected shape ({n}, {k}), got {w.shape}")
    if np.any(w < 0) or np.any(w > 1 + atol):
        raise ValueError("responsibilities must lie in [0, 1]")
    if np.any(np.abs(w.sum(axis=1) - 1.0) > atol):
        raise ValueError("responsibility rows must sum to 1")
    return w


__all__ = [
    "LOG_ZERO",
    "MixtureModel",
    "SymmetricComponent",
    "check_responsibilities",
    "component_log_density",
    "log_joint",
    "log_likelihood",
    "mixture_density",
    "mixture_log_density",
    "posterior_weights",
]
