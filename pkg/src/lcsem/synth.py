"""Seeded samplers for Gaussian / Laplace location mixtures.

Random streams come from NumPy's Philox counter-based generator keyed by the
integer seed, so a (spec, n, seed) triple reproduces the same draws on any
platform.  Per-repetition streams use ``seed ^ rep``.

Conventions: ``N(a, b)`` has mean ``a`` and *variance* ``b``; ``L(a, b)`` has
location ``a`` and scale ``b``, i.e. density ``exp(-|x - a| / b) / (2 b)``.
Gaussian components store their standard deviation as ``scale``.
"""

import csv
import io
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

FAMILIES = ("gaussian", "laplace")


class Component(NamedTuple):
    family: str
    location: float
    scale: float
    weight: float


@dataclass(frozen=True)
class TrueModelSpec:
    components: tuple
    default_n: int = 500
    name: str = ""

    def __post_init__(self):
        comps = tuple(Component(*c) for c in self.components)
        if not comps:
            raise ValueError("need at least one component")
        for c in comps:
            if c.family not in FAMILIES:
                raise ValueError(f"unknown family {c.family!r}")
            if not c.scale > 0:
                raise ValueError("scales must be positive")
            if c.weight < 0:
                raise ValueError("weights must be nonnegative")
        if abs(sum(c.weight for c in comps) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        object.__setattr__(self, "components", comps)

    @property
    def k(self):
        return len(self.components)

    @property
    def weights(self):
        return np.array([c.weight for c in self.components])

    def mean(self):
        return sum(c.weight * c.location for c in self.components)

    def variance(self):
        second = sum(
            c.weight * (c.location ** 2 + (c.scale ** 2 if c.family == "gaussian" else 2 * c.scale ** 2))
            for c in self.components)
        return second - self.mean() ** 2


def gaussian(mean, variance, weight):
    return Component("gaussian", float(mean), math.sqrt(variance), float(weight))


def laplace(location, scale, weight):
    return Component("laplace", float(location), float(scale), float(weight))


def preset(model_id, normal_second_param="variance"):
    """Simulation models 1-5.

    ``normal_second_param`` selects how the second argument of ``N(a, b)`` is
    read ("variance" or "sd"); it only matters for Model 2.
    """
    if normal_second_param not in ("variance", "sd"):
        raise ValueError("normal_second_param must be 'variance' or 'sd'")

    def n(mean, b, weight):
        return gaussian(mean, b if normal_second_param == "variance" else b * b, weight)

    models = {
        1: ((n(0, 1, 0.2), n(1, 1, 0.8)), 500),
        2: ((n(0, 1, 0.2), n(2, 2, 0.8)), 500),
        3: ((laplace(0, 1, 0.2), laplace(1, 1, 0.8)), 500),
        4: ((laplace(0, 1, 0.2), laplace(1.5, 1, 0.4), laplace(-1.5, 1, 0.4)), 500),
        5: ((n(0, 1, 0.2), n(1.5, 1, 0.2), n(-1.5, 1, 0.2),
             laplace(3, 1, 0.2), laplace(-3, 1, 0.2)), 1000),
    }
    if model_id not in models:
        raise KeyError(f"unknown model id {model_id!r}; expected 1-5")
    comps, size = models[model_id]
    return TrueModelSpec(comps, default_n=size, name=f"model{model_id}")


FIGURE1 = TrueModelSpec((gaussian(-1, 1, 0.15), gaussian(2, 1, 0.85)), default_n=300,
                        name="figure1")


@dataclass(frozen=True, eq=False)
class LabeledSample:
    values: np.ndarray
    labels: np.ndarray
    seed: int

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["x", "label"])
        for v, lab in zip(self.values, self.labels):
            writer.writerow([repr(float(v)), int(lab)])
        return buf.getvalue()


def make_rng(seed):
    return np.random.Generator(np.random.Philox(int(seed)))


def stream_seed(seed, rep):
    return int(seed) ^ int(rep)


def sample(spec, n, seed):
    """Draw labels from the weights, then values from the labelled components.

    Labels are 1-based.  Laplace draws use the inverse distribution function.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = make_rng(seed)
    cum = np.cumsum(spec.weights)
    cum[-1] = 1.0
    z = np.searchsorted(cum, rng.random(n), side="right")
    z = np.minimum(z, spec.k - 1)
    normal = rng.standard_normal(n)
    u = rng.random(n) - 0.5
    loc = np.array([c.location for c in spec.components])[z]
    scale = np.array([c.scale for c in spec.components])[z]
    is_lap = np.array([c.family == "laplace" for c in spec.components])[z]
    lap = -np.sign(u) * np.log1p(-2.0 * np.abs(u))
    x = loc + scale * np.where(is_lap, lap, normal)
    return LabeledSample(x, z + 1, int(seed))


def component_logpdf(c, x):
    x = np.asarray(x, dtype=float)
    if c.family == "gaussian":
        zz = (x - c.location) / c.scale
        return -0.5 * zz * zz - math.log(c.scale) - 0.5 * math.log(2 * math.pi)
    return -np.abs(x - c.location) / c.scale - math.log(2 * c.scale)


def true_log_joint(spec, values):
    x = np.asarray(values, dtype=float).ravel()
    with np.errstate(divide="ignore"):
        return np.column_stack([math.log(c.weight) + component_logpdf(c, x) if c.weight > 0
                                else np.full(x.size, -np.inf) for c in spec.components])


def true_posteriors(spec, values):
    """Posterior membership probabilities under the true parametric model."""
    lj = true_log_joint(spec, values)
    return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))


def true_log_likelihood(spec, values):
    return float(np.sum(logsumexp(true_log_joint(spec, values), axis=1)))
