"""Semiparametric EM for location mixtures of symmetric log-concave densities.

Each iteration runs the M-step (weights, then centers against the current
component shapes, then shapes at the new centers) followed by the E-step.
Iteration starts with the M-step on the supplied responsibilities.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .exceptions import (ComponentCollapseError, DegenerateDataError,
                         DegenerateWeightsError)
from .gmm_baseline import VARIANCE_MODES, fit_gmm
from .mixture_model import (LOG2, MixtureModel, SymmetricComponent,
                            check_responsibilities, log_joint)
from .shape_mle import DEFAULT_TOL, WeightedSample, fit_monotone_logconcave, log_density

logger = logging.getLogger(__name__)

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SemConfig:
    k: int
    max_iter: int = 200
    rel_tol: float = 1e-7
    mu_tol: float = 1e-6
    weight_floor: float = 1e-10
    component_floor: float = 1e-6
    solver_tol: float = DEFAULT_TOL
    # variance model of the Gaussian mixture that supplies the start
    init_variance: str = "equal"

    def __post_init__(self):
        if self.init_variance not in VARIANCE_MODES:
            raise ValueError(f"init_variance must be one of {VARIANCE_MODES}")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        for name in ("rel_tol", "mu_tol", "weight_floor", "component_floor", "solver_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    pi: tuple
    mu: tuple
    loglik: float
    flagged: bool = False


@dataclass
class SemTrace:
    records: list = field(default_factory=list)
    status: str = "running"

    @property
    def n_iter(self):
        return len(self.records)

    @property
    def logliks(self):
        return np.array([r.loglik for r in self.records])

    @property
    def flagged_iterations(self):
        return [r.iteration for r in self.records if r.flagged]

    def monotone(self, slack=1e-8):
        """True when L never drops by more than ``slack`` between unflagged iterations."""
        recs = self.records
        return all(
            b.loglik >= a.loglik - slack
            for a, b in zip(recs, recs[1:])
            if not (a.flagged or b.flagged)
        )

    def relabeled(self, order):
        order = list(order)
        recs = [
            IterationRecord(r.iteration, tuple(r.pi[j] for j in order),
                            tuple(r.mu[j] for j in order), r.loglik, r.flagged)
            for r in self.records
        ]
        return SemTrace(recs, self.status)


def golden_section_max(f, a, b, tol):
    """Maximise a concave ``f`` on ``[a, b]`` until the bracket is at most ``tol`` wide."""
    if b - a <= tol:
        mid = 0.5 * (a + b)
        return mid
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    return c if fc >= fd else d


def m_step_pi(w):
    """Column means of the responsibilities."""
    w = np.asarray(w, dtype=float)
    pi = w.mean(axis=0)
    return pi / pi.sum()


def _kept(data, w_col, weight_floor):
    x = np.asarray(data, dtype=float).ravel()
    w = np.asarray(w_col, dtype=float).ravel()
    total = w.sum()
    if not total > 0:
        raise DegenerateWeightsError("component has no responsibility mass")
    keep = w >= weight_floor * total
    if not keep.any():
        raise DegenerateWeightsError("all responsibilities are below the weight floor")
    return x[keep], w[keep]


def m_step_mu(data, w_col, half_density, mu_tol=1e-6, weight_floor=1e-10, current=None):
    """Center maximising ``sum_i w_i log f(x_i - mu)`` for the given half-density.

    Points whose responsibility is below ``weight_floor`` times the column
    total are ignored, matching the shape update.  The search runs over the
    centers that keep every remaining point inside the support, where the
    criterion is finite and concave.  If ``current`` scores at least as well
    as the search result it is kept, so the criterion never decreases.
    """
    x, w = _kept(data, w_col, weight_floor)
    radius = half_density.support_max

    def crit(mu):
        return float(w @ log_density(half_density, np.abs(x - mu)))

    lo, hi = x.max() - radius, x.min() + radius
    if lo > hi:
        logger.debug("no center keeps all weighted points in the support")
        return float(current) if current is not None else float(w @ x / w.sum())
    best = golden_section_max(crit, lo, hi, mu_tol)
    if current is not None and lo <= current <= hi and crit(current) >= crit(best):
        return float(current)
    return float(best)


def m_step_f(data, w_col, mu_new, floor=1e-10, tol=DEFAULT_TOL):
    """Weighted shape update: fold about ``mu_new`` and fit the half-density."""
    x, w = _kept(data, w_col, floor)
    sample = WeightedSample.from_data(np.abs(x - mu_new), w)
    return SymmetricComponent(float(mu_new), fit_monotone_logconcave(sample, tol=tol))


def _e_step(model, x):
    lj = log_joint(model, x)
    lse = logsumexp(lj, axis=1)
    bad = ~np.isfinite(lse)
    w = np.exp(lj - np.where(bad, 0.0, lse)[:, None])
    w[bad] = 1.0 / model.k
    loglik = float(lse.sum()) if not bad.any() else -math.inf
    return w, loglik, bool(bad.any())


def run_sem(data, cfg, init):
    """Run SEM from responsibilities ``init``.

    Returns the fitted model in canonical (ascending center) order and the
    trace, relabelled to the same order.  Raises ComponentCollapseError if a
    mixture weight falls below ``cfg.component_floor``.
    """
    x = np.asarray(data, dtype=float).ravel()
    n, k = x.size, cfg.k
    if n < k:
        raise ValueError(f"need at least k={k} observations, got {n}")
    w = check_responsibilities(init, n, k)
    trace = SemTrace()
    comps = [None] * k
    prev = None
    model = None
    for it in range(1, cfg.max_iter + 1):
        pi = m_step_pi(w)
        if pi.min() < cfg.component_floor:
            trace.status = "collapsed"
            raise ComponentCollapseError(
                f"component {int(np.argmin(pi)) + 1} weight {pi.min():.3g} below floor "
                f"at iteration {it}", trace)
        updated = []
        for j in range(k):
            if comps[j] is None:
                # Starting shapes are Gaussian, whose best center is the weighted mean.
                mu = float(w[:, j] @ x / w[:, j].sum())
            else:
                mu = m_step_mu(x, w[:, j], comps[j].half_density, cfg.mu_tol,
                               cfg.weight_floor, current=comps[j].center)
            updated.append(m_step_f(x, w[:, j], mu, cfg.weight_floor, cfg.solver_tol))
        comps = updated
        model = MixtureModel(pi, tuple(comps))
        w, loglik, flagged = _e_step(model, x)
        trace.records.append(IterationRecord(
            it, tuple(float(p) for p in pi), tuple(c.center for c in comps), loglik, flagged))
        if flagged:
            logger.info("iteration %d: point(s) outside every support", it)
        if (prev is not None and math.isfinite(loglik) and math.isfinite(prev)
                and abs(loglik - prev) <= cfg.rel_tol * (1.0 + abs(prev))):
            trace.status = "converged"
            break
        prev = loglik
    else:
        trace.status = "max-iter"
    order = model.canonical_order()
    return model.permuted(order), trace.relabeled(order)


def jensen_gap(m, w, data):
    """Return ``(L, Q, C)`` with ``L >= Q - C`` for any row-stochastic ``w``.

    ``Q = sum_ij w_ij log(pi_j h_j(|x_i - mu_j|))`` uses the half-densities,
    and ``C = sum_ij w_ij log w_ij + n log 2``; the two ``log 2`` terms cancel
    so equality holds when ``w`` are the posteriors of ``m``.  ``0 log 0`` is 0.
    """
    x = np.asarray(data, dtype=float).ravel()
    w = np.asarray(w, dtype=float)
    lj = log_joint(m, x)
    loglik = float(np.sum(logsumexp(lj, axis=1)))
    pos = w > 0
    q = float(np.sum(w[pos] * (lj[pos] + LOG2)))
    c = float(np.sum(w[pos] * np.log(w[pos]))) + x.size * LOG2
    return loglik, q, c


def q_value(m, w, data):
    """Expected complete log-likelihood ``Q(m, w)`` on the half-density scale."""
    return jensen_gap(m, w, data)[1]


def quantile_responsibilities(data, k):
    """Hard assignment of the sorted data into k equal-count blocks."""
    x = np.asarray(data, dtype=float).ravel()
    ranks = np.empty(x.size, dtype=int)
    ranks[np.argsort(x, kind="stable")] = np.arange(x.size)
    labels = np.minimum(ranks * k // x.size, k - 1)
    w = np.zeros((x.size, k))
    w[np.arange(x.size), labels] = 1.0
    return w


def fit_sem(data, k, cfg=None, seed=0):
    """GMM-initialised SEM.  Returns ``(model, trace, gmm_fit)``.

    The start is the posterior matrix of a Gaussian mixture with the
    variance model ``cfg.init_variance``.  ``gmm_fit`` is None when the GMM
    could not be fitted and the quantile initialisation was used instead.
    """
    cfg = cfg or SemConfig(k=k)
    gmm = None
    try:
        gmm = fit_gmm(data, k, seed=seed, variance=cfg.init_variance)
        init = gmm.responsibilities
    except (DegenerateDataError, ValueError, FloatingPointError) as exc:
        logger.warning("GMM initialisation failed (%s); using quantile blocks", exc)
        init = quantile_responsibilities(data, k)
    model, trace = run_sem(data, cfg, init)
    return model, trace, gmm
