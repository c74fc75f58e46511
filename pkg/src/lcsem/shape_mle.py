"""Weighted maximum likelihood for non-increasing log-concave densities on [0, inf).

The estimate is a log-density ``psi`` that is concave, non-increasing, linear
between observations, flat on ``[0, x_1]`` and ``-inf`` beyond the largest
observation.  It minimises the weighted criterion

    Lambda_W(psi) = -sum_i w_i psi(x_i) + W * int_0^inf exp(psi(x)) dx,

with ``W = sum_i w_i``.  The minimiser integrates to one, so no explicit
normalisation constraint is needed.

The solver is a primal active-set method on the kink sizes of ``psi``: for a
fixed set of knots the criterion is smooth and strictly convex in the values
of ``psi`` at those knots and is minimised by damped Newton steps; knots whose
kink turns negative are dropped, and the knot with the most negative
directional derivative is added until none is below the tolerance.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, solveh_banded

from .exceptions import InconsistentInputsError, InvalidSampleError

logger = logging.getLogger(__name__)

LOG_ZERO = -np.inf

DEFAULT_TOL = 1e-8
MAX_OUTER_ITER = 500

# |b - a| below which segment_exp_integral switches to its Taylor expansion
_EXP_SWITCH = 1e-6
# below this the closed forms of the first and second moments lose digits
_MOMENT_SWITCH = 0.5
_MOMENT_TERMS = 20


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class WeightedSample:
    """Strictly increasing nonnegative abscissae with positive weights."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        points = _readonly(np.ravel(self.points))
        weights = _readonly(np.ravel(self.weights))
        if points.size == 0:
            raise InvalidSampleError("sample is empty")
        if points.shape != weights.shape:
            raise InvalidSampleError(
                f"{points.size} points but {weights.size} weights")
        if not (np.all(np.isfinite(points)) and np.all(np.isfinite(weights))):
            raise InvalidSampleError("points and weights must be finite")
        if points[0] < 0:
            raise InvalidSampleError("points must be nonnegative")
        if np.any(np.diff(points) <= 0):
            raise InvalidSampleError("points must be strictly increasing")
        if np.any(weights <= 0):
            raise InvalidSampleError("weights must be strictly positive")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_data(cls, x, weights=None):
        """Sort ``x`` and merge duplicated values by summing their weights."""
        x = np.ravel(np.asarray(x, dtype=float))
        w = np.ones_like(x) if weights is None else np.ravel(np.asarray(weights, dtype=float))
        if x.shape != w.shape:
            raise InvalidSampleError(f"{x.size} points but {w.size} weights")
        if np.any(w <= 0):
            raise InvalidSampleError("weights must be strictly positive")
        points, inverse = np.unique(x, return_inverse=True)
        merged = np.bincount(inverse.ravel(), weights=w, minlength=points.size)
        return cls(points, merged)

    @property
    def total_weight(self):
        return float(np.sum(self.weights))

    @property
    def size(self):
        return self.points.size


@dataclass(frozen=True, eq=False)
class MonotoneLogConcaveFit:
    """Piecewise-linear log-density on ``[0, knots[-1]]``.

    ``knots[0]`` is always 0.  ``psi[j]`` is the log-density at ``knots[j]``;
    between knots the log-density is linear and beyond the last knot it is
    ``-inf``.
    """

    knots: np.ndarray
    psi: np.ndarray
    objective: float = float("nan")
    converged: bool = True
    n_iter: int = 0
    kink_tol: float = field(default=1e-10, repr=False)

    def __post_init__(self):
        knots = _readonly(np.ravel(self.knots))
        psi = _readonly(np.ravel(self.psi))
        if knots.size < 2 or knots.shape != psi.shape:
            raise ValueError("need at least two knots with one psi value each")
        if knots[0] != 0.0 or np.any(np.diff(knots) <= 0):
            raise ValueError("knots must start at 0 and increase strictly")
        if not np.all(np.isfinite(psi)):
            raise ValueError("psi must be finite on the knots")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "psi", psi)

    @property
    def support_max(self):
        return float(self.knots[-1])

    @property
    def slopes(self):
        return np.diff(self.psi) / np.diff(self.knots)

    def log_density(self, x):
        return log_density(self, x)

    def density(self, x):
        return np.exp(log_density(self, x))

    def cdf(self, x):
        return cdf(self, x)

    def integral(self):
        """Total mass, which is 1 up to solver precision."""
        return float(np.sum(segment_exp_integral(
            self.psi[:-1], self.psi[1:], np.diff(self.knots))))


def log_density(fit, x):
    """Log-density of ``fit`` at ``x``; ``-inf`` outside ``[0, knots[-1]]``."""
    x = np.asarray(x, dtype=float)
    inside = (x >= 0) & (x <= fit.knots[-1])
    out = np.where(inside, np.interp(x, fit.knots, fit.psi), LOG_ZERO)
    return float(out) if out.ndim == 0 else out


def segment_exp_integral(a, b, d):
    """``int_0^d exp(a + (b - a) u / d) du`` in closed form.

    Near ``a == b`` the divided difference ``expm1(b - a) / (b - a)`` is
    replaced by its four-term Taylor series.  Broadcasts over arrays.
    """
    a, b, d = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, d)))
    delta = -np.abs(b - a)
    top = np.maximum(a, b)
    small = np.abs(delta) < _EXP_SWITCH
    safe = np.where(small, -1.0, delta)
    ratio = np.where(
        small,
        1.0 + delta / 2.0 + delta ** 2 / 6.0 + delta ** 3 / 24.0,
        np.expm1(safe) / safe,
    )
    out = np.where(d > 0, d * np.exp(top) * ratio, 0.0)
    return float(out) if out.ndim == 0 else out


def _moments(delta):
    """``M_p = int_0^1 t^p exp(t delta) dt`` for p = 0, 1, 2 and ``delta <= 0``."""
    small = delta > -_MOMENT_SWITCH
    m = [np.empty_like(delta) for _ in range(3)]
    if np.any(small):
        ds = delta[small]
        term = np.ones_like(ds)
        acc = [np.zeros_like(ds) for _ in range(3)]
        for k in range(_MOMENT_TERMS):
            if k:
                term = term * ds / k
            for p in range(3):
                acc[p] += term / (p + k + 1)
        for p in range(3):
            m[p][small] = acc[p]
    big = ~small
    if np.any(big):
        db = delta[big]
        e = np.exp(db)
        m[0][big] = np.expm1(db) / db
        m[1][big] = (e * (db - 1.0) + 1.0) / db ** 2
        m[2][big] = (e * (db * db - 2.0 * db + 2.0) - 2.0) / db ** 3
    return m


def _segment_terms(a, b, d):
    """Integral of exp over linear segments and its derivatives in (a, b).

    Returns ``(J, Ja, Jb, Jaa, Jab, Jbb)``.  ``Jb`` doubles as
    ``int (x - left) exp(psi) dx / d`` over the segment.
    """
    delta = b - a
    swap = delta > 0
    top = np.where(swap, b, a)
    m0, m1, m2 = _moments(-np.abs(delta))
    scale = d * np.exp(top)
    j = scale * m0
    near, far = scale * (m0 - m1), scale * m1
    near2, cross, far2 = scale * (m0 - 2.0 * m1 + m2), scale * (m1 - m2), scale * m2
    ja = np.where(swap, far, near)
    jb = np.where(swap, near, far)
    jaa = np.where(swap, far2, near2)
    jbb = np.where(swap, near2, far2)
    return j, ja, jb, jaa, cross, jbb


def cdf(fit, x):
    """Distribution function of ``fit`` evaluated at ``x`` and clamped to [0, 1]."""
    x = np.asarray(x, dtype=float)
    knots, psi = fit.knots, fit.psi
    seg = segment_exp_integral(psi[:-1], psi[1:], np.diff(knots))
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    xc = np.clip(x, 0.0, knots[-1])
    r = np.clip(np.searchsorted(knots, xc, side="right") - 1, 0, knots.size - 2)
    partial = segment_exp_integral(psi[r], np.interp(xc, knots, psi), xc - knots[r])
    out = np.clip(cum[r] + partial, 0.0, 1.0)
    out = np.where(x >= knots[-1], np.minimum(cum[-1], 1.0), out)
    out = np.where(x <= 0, 0.0, out)
    return float(out) if out.ndim == 0 else out


# -- solver -----------------------------------------------------------------


def _grid(sample):
    """Abscissae {0} U points with normalised weights (0 at an added origin)."""
    p = sample.weights / sample.total_weight
    if sample.points[0] == 0.0:
        return sample.points.copy(), p
    return np.concatenate(([0.0], sample.points)), np.concatenate(([0.0], p))


def _data_coefficients(grid, p, kp):
    """``c`` such that ``sum_i p_i psi(x_i) = c @ theta`` for knots ``kp``."""
    if kp.size == 1:
        return np.array([p.sum()])
    r = np.clip(np.searchsorted(kp, grid, side="right") - 1, 0, kp.size - 2)
    lam = np.clip((grid - kp[r]) / (kp[r + 1] - kp[r]), 0.0, 1.0)
    return (np.bincount(r, (1.0 - lam) * p, kp.size)
            + np.bincount(r + 1, lam * p, kp.size))


def _criterion(kp, c, theta):
    """Normalised criterion -c @ theta + int exp(psi)."""
    with np.errstate(over="ignore", invalid="ignore"):
        mass = kp[0] * math.exp(min(theta[0], 700.0)) if kp[0] > 0 else 0.0
        if kp.size > 1:
            mass += np.sum(segment_exp_integral(theta[:-1], theta[1:], np.diff(kp)))
        val = mass - c @ theta
    return val if np.isfinite(val) else np.inf


def _newton(kp, c, theta, max_steps=100):
    """Minimise the criterion over values at the knots ``kp``."""
    f = _criterion(kp, c, theta)
    n = kp.size
    for _ in range(max_steps):
        grad = -c.copy()
        diag = np.zeros(n)
        off = np.zeros(max(n - 1, 0))
        if kp[0] > 0:
            e0 = kp[0] * math.exp(theta[0])
            grad[0] += e0
            diag[0] += e0
        if n > 1:
            _, ja, jb, jaa, jab, jbb = _segment_terms(theta[:-1], theta[1:], np.diff(kp))
            grad[:-1] += ja
            grad[1:] += jb
            diag[:-1] += jaa
            diag[1:] += jbb
            off[:] = jab
        try:
            banded = np.vstack((np.concatenate(([0.0], off)), diag))
            step = solveh_banded(banded, -grad)
        except (LinAlgError, ValueError):
            step = -grad / np.maximum(diag, 1e-300)
        dec = -(grad @ step)
        if not dec > 1e-26:
            break
        if dec < 1e-10:
            theta = theta + step
            f = _criterion(kp, c, theta)
            continue
        t = 1.0
        while True:
            trial = theta + t * step
            ft = _criterion(kp, c, trial)
            if ft <= f - 1e-4 * t * dec:
                break
            t *= 0.5
            if t < 1e-12:
                return theta
        theta, f = trial, ft
    return theta


def _kinks(kp, theta):
    """Slope decrease at every knot but the last; the first uses slope 0 on its left."""
    if kp.size == 1:
        return np.empty(0)
    s = np.diff(theta) / np.diff(kp)
    return np.concatenate(([-s[0]], s[:-1] - s[1:]))


def _hinge_residuals(grid, p, kp, theta):
    """``A_j - B_j`` for every grid point ``t_j``, where

    ``A_j = sum_i p_i (x_i - t_j)_+`` and ``B_j = int (x - t_j)_+ exp(psi)``.

    This is the derivative of the criterion with respect to adding a
    concave kink of unit size at ``t_j``.
    """
    psi = np.interp(grid, kp, theta)
    d = np.diff(grid)
    j, _, jb, *_ = _segment_terms(psi[:-1], psi[1:], d)
    s0 = np.concatenate((np.cumsum(p[::-1])[::-1][1:], [0.0]))
    s1 = np.concatenate((np.cumsum((p * grid)[::-1])[::-1][1:], [0.0]))
    first = grid[:-1] * j + d * jb
    r1 = np.concatenate((np.cumsum(first[::-1])[::-1], [0.0]))
    r0 = np.concatenate((np.cumsum(j[::-1])[::-1], [0.0]))
    return (s1 - grid * s0) - (r1 - grid * r0)


def fit_monotone_logconcave(sample, tol=DEFAULT_TOL, max_iter=MAX_OUTER_ITER):
    """Weighted MLE of a non-increasing log-concave density.

    Parameters
    ----------
    sample : WeightedSample
        Observations and their positive weights.
    tol : float
        Largest admissible violation of the first-order conditions, measured
        on the sample rescaled so that its largest point is 1.
    max_iter : int
        Cap on active-set iterations.  When reached, the best iterate is
        returned with ``converged=False``.

    Returns
    -------
    MonotoneLogConcaveFit
    """
    if not isinstance(sample, WeightedSample):
        raise InvalidSampleError("expected a WeightedSample")
    if tol <= 0:
        raise ValueError("tol must be positive")
    grid, p = _grid(sample)
    m = grid.size - 1
    if m == 0:
        raise InvalidSampleError("all mass sits at 0; the support has zero length")
    # the estimator is scale-equivariant; work on [0, 1] and map back
    raw = grid
    scale = grid[-1]
    if -math.log(scale) > 700.0:
        raise InvalidSampleError(f"support [0, {scale!r}] is too short to represent the density")
    grid = grid / scale
    top = 1.0

    allowed = np.ones(m + 1, dtype=bool)
    allowed[m] = False
    if p[0] == 0.0:
        allowed[0] = False

    free = []
    kp = np.array([top])
    theta = np.array([-math.log(top)])
    converged = False
    n_outer = 0
    while n_outer < max_iter:
        n_outer += 1
        c = _data_coefficients(grid, p, kp)
        while True:
            cand = _newton(kp, c, theta)
            gc = _kinks(kp, cand)
            neg = gc < 0
            if not neg.any():
                theta = cand
                break
            g = np.maximum(_kinks(kp, theta), 0.0)
            ratios = g[neg] / (g[neg] - gc[neg])
            t = ratios.min()
            theta = theta + t * (cand - theta)
            drop = np.flatnonzero(neg)[ratios <= t * (1 + 1e-12)]
            drop = np.union1d(drop, np.flatnonzero(_kinks(kp, theta) <= 0))
            free = [f for r, f in enumerate(free) if r not in set(drop.tolist())]
            kp = np.delete(kp, drop)
            theta = np.delete(theta, drop)
            c = _data_coefficients(grid, p, kp)

        resid = _hinge_residuals(grid, p, kp, theta)
        resid[~allowed] = np.inf
        resid[free] = np.inf
        best = int(np.argmin(resid))
        if resid[best] >= -tol:
            converged = True
            break
        free = sorted(free + [best])
        new_kp = grid[free + [m]]
        theta = np.interp(new_kp, kp, theta)
        kp = new_kp

    if not converged:
        logger.warning("active set did not converge in %d iterations", max_iter)

    mass = _criterion(kp, np.zeros_like(theta), theta)
    theta = theta - math.log(mass)
    c = _data_coefficients(grid, p, kp)
    objective = sample.total_weight * (_criterion(kp, c, theta) + math.log(scale))
    kp = raw[free + [m]]
    theta = theta - math.log(scale)
    if kp[0] > 0:
        knots = np.concatenate(([0.0], kp))
        psi = np.concatenate(([theta[0]], theta))
    else:
        knots, psi = kp, theta
    return MonotoneLogConcaveFit(knots, psi, objective=float(objective),
                                 converged=converged, n_iter=n_outer)


# -- optimality check ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OptimalityReport:
    """Violations of the characterisation inequalities, all >= 0.

    ``lower`` holds the violation for the test functions ``-(x - t)_+`` at every
    ``t`` in ``{0} U points``; ``upper`` the violation of ``+(x - t)_+`` at the
    strict kinks (``kink_points``); ``normalization`` is ``|int exp(psi) - 1|``.
    """

    lower: np.ndarray
    upper: np.ndarray
    kink_points: np.ndarray
    normalization: float
    objective: float

    @property
    def max_violation(self):
        vals = [self.normalization]
        if self.lower.size:
            vals.append(float(self.lower.max()))
        if self.upper.size:
            vals.append(float(self.upper.max()))
        return max(vals)

    def default_tolerance(self):
        return 1e-6 * (1.0 + abs(self.objective))

    def passed(self, tol=None):
        return self.max_violation <= (self.default_tolerance() if tol is None else tol)


def strict_kinks(fit):
    """Knots where the slope of ``psi`` strictly decreases (including at 0)."""
    s = fit.slopes
    gamma = np.concatenate(([-s[0]], s[:-1] - s[1:]))
    scale = 1.0 + np.max(np.abs(s))
    return fit.knots[:-1][gamma > fit.kink_tol * scale]


def verify_optimality(fit, sample):
    """Evaluate the first-order characterisation of the MLE for ``fit``."""
    grid, p = _grid(sample)
    inner = fit.knots[1:]
    if fit.knots[-1] != grid[-1] or not np.all(np.isin(inner, grid)):
        raise InconsistentInputsError(
            "fit knots are not a subset of {0} U sample points ending at the maximum")
    resid = _hinge_residuals(grid, p, fit.knots, fit.psi)
    lower = np.maximum(-resid, 0.0)
    kinks = strict_kinks(fit)
    idx = np.searchsorted(grid, kinks)
    upper = np.maximum(resid[idx], 0.0)
    norm = abs(fit.integral() - 1.0)
    objective = fit.objective
    if not np.isfinite(objective):
        psi_pts = log_density(fit, sample.points)
        objective = -float(sample.weights @ psi_pts) + sample.total_weight * fit.integral()
    return OptimalityReport(lower=lower, upper=upper, kink_points=kinks,
                            normalization=norm, objective=float(objective))
