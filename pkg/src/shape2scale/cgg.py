"""Complex generalized Gaussian (CGG) model.

Density generator ``g(t) = exp(-t**s / b)`` with
``b = (N Gamma(N/s) / Gamma((N+1)/s))**s``.  ``s = 1`` is the circular
complex Gaussian; ``s < 1`` gives heavier tails.  All Gamma functions are
evaluated in log space.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln

from .ces_core import sample_covariance, shrink_to_identity
from .errors import DecompositionError, EstimationError, ParameterError, ShapeError

log = logging.getLogger(__name__)

S_BOUNDS = (0.01, 10.0)


def cgg_log_b(dim, s):
    if dim < 1 or not np.all(np.asarray(s) > 0):
        raise ParameterError("need dim >= 1 and s > 0")
    return s * (np.log(dim) + gammaln(dim / s) - gammaln((dim + 1) / s))


def cgg_b(dim, s):
    """Normalization constant b of the CGG density generator."""
    lb = cgg_log_b(dim, s)
    if not np.isfinite(lb) or lb > 700:
        raise EstimationError(f"b overflows for N={dim}, s={s}")
    return float(np.exp(lb))


def _chol(scatter):
    try:
        return np.linalg.cholesky(scatter)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError("scatter matrix is not positive definite") from exc


def quadratic_forms(samples, scatter):
    """``z_i^H scatter^-1 z_i`` for each row and ``log det scatter``."""
    z = np.atleast_2d(samples)
    c = _chol(np.asarray(scatter, dtype=complex))
    if z.shape[1] != c.shape[0]:
        raise ShapeError("sample dimension does not match scatter matrix")
    w = solve_triangular(c, z.T, lower=True, check_finite=False)
    q = np.sum(w.real**2 + w.imag**2, axis=0)
    logdet = 2 * np.sum(np.log(np.real(np.diag(c))))
    return q, logdet


def _log_const(n, s):
    return np.log(s) + gammaln(n) - (n / s) * cgg_log_b(n, s) - n * np.log(np.pi) - gammaln(n / s)


def cgg_log_pdf(z, scatter, s):
    """Log density of the CGG law at ``z`` (one vector or rows of an array)."""
    if not s > 0:
        raise ParameterError("s must be > 0")
    z = np.asarray(z, dtype=complex)
    q, logdet = quadratic_forms(z, scatter)
    n = z.shape[-1]
    out = _log_const(n, s) - logdet - np.exp(s * np.log(q) - cgg_log_b(n, s))
    return float(out[0]) if z.ndim == 1 else out


def _shape_objective(log_q, n, s):
    """Per-sample average log-likelihood terms that depend on s (vectorized over s)."""
    s = np.atleast_1d(s)
    lb = cgg_log_b(n, s)
    tail = np.exp(s[:, None] * log_q[None, :] - lb[:, None]).mean(axis=1)
    return np.log(s) - gammaln(n / s) - (n / s) * lb - tail


def _maximize_shape(log_q, n, search=S_BOUNDS, n_grid=41, init=None):
    lo, hi = np.log(search[0]), np.log(search[1])

    def objective(x):
        with np.errstate(over="ignore", invalid="ignore"):
            v = _shape_objective(log_q, n, np.exp(np.atleast_1d(x)))
        return np.where(np.isfinite(v), v, -np.inf)

    grid = None
    if init is not None:
        # local bracket around the previous estimate; widen if the peak is on its edge
        x0 = np.clip(np.log(init), lo, hi)
        grid = np.linspace(max(lo, x0 - 0.3), min(hi, x0 + 0.3), 7)
        vals = objective(grid)
        i = int(np.argmax(vals))
        if (i == 0 and grid[0] > lo) or (i == grid.size - 1 and grid[-1] < hi) or not np.isfinite(vals[i]):
            grid = None
    if grid is None:
        grid = np.linspace(lo, hi, n_grid)
        vals = objective(grid)
        i = int(np.argmax(vals))
    if not np.isfinite(vals[i]):
        raise EstimationError("shape objective is not finite on the search interval")
    # zoom: re-grid the bracket around the best point until it is tiny
    while grid[1] - grid[0] > 1e-6:
        a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
        grid = np.linspace(a, b, 9)
        vals = objective(grid)
        i = int(np.argmax(vals))
    return float(np.exp(grid[i]))


def estimate_shape_s(samples, scatter, search=S_BOUNDS, init=None):
    """Maximum-likelihood shape parameter with the scatter matrix held fixed.

    Grid search on log s, then repeated finer grids over the bracket of the
    best point (a bounded, derivative-free refinement).  Returns a
    value inside ``search``; it equals a bound when the optimum lies there.
    ``init`` narrows the grid to a bracket around a previous estimate.
    """
    z = np.atleast_2d(np.asarray(samples, dtype=complex))
    if z.shape[0] < 2:
        raise ParameterError("need at least two samples")
    q, _ = quadratic_forms(z, scatter)
    q = q[q > 0]
    return _maximize_shape(np.log(q), z.shape[1], search, init=init)


def cgg_weights(q, n, s):
    """``phi(q) = (s/b) q^(s-1)``."""
    return np.exp(np.log(s) - cgg_log_b(n, s) + (s - 1) * np.log(q))


def cgg_scatter_update(samples, scatter_k, s):
    """One fixed-point MLE step ``(1/L) sum phi(q_i) z_i z_i^H``."""
    z = np.atleast_2d(np.asarray(samples, dtype=complex))
    n = z.shape[1]
    q, _ = quadratic_forms(z, scatter_k)
    ok = q > 0
    w = np.zeros_like(q)
    w[ok] = cgg_weights(q[ok], n, s)
    new = (z.T * w) @ z.conj() / z.shape[0]
    new = (new + new.conj().T) / 2
    if np.linalg.matrix_rank(new) < n:
        warnings.warn("rank-deficient CGG scatter update; shrinking toward identity", RuntimeWarning, stacklevel=2)
        new = shrink_to_identity(new, "auto", n_samples=z.shape[0])
        if np.trace(new).real <= 0:
            new = np.eye(n, dtype=complex)
    return new


def cgg_log_likelihood(samples, scatter, s):
    return float(np.mean(cgg_log_pdf(np.atleast_2d(samples), scatter, s)))


@dataclass
class CGGConfig:
    search: tuple = S_BOUNDS
    s_tol: float = 1e-4
    scatter_tol: float = 1e-4
    max_rounds: int = 50


@dataclass
class CGGFit:
    s: float
    scatter: np.ndarray
    iterations: int
    converged: bool
    log_likelihood: float
    at_bound: bool = False
    history: list = field(default_factory=list)


def _initial_scatter(z):
    L, n = z.shape
    scm = sample_covariance(z)
    if L <= n or np.linalg.cond(scm) > 1e12:
        scm = shrink_to_identity(scm, "auto", n_samples=L)
        if np.trace(scm).real <= 0:
            scm = np.eye(n, dtype=complex)
    return scm


def estimate_cgg(samples, config=None):
    """Alternating ML estimation of (s, scatter) under the CGG model.

    Starts from the sample covariance (shrunk when L <= N) and alternates a
    shape step and one fixed-point scatter step until both relative changes
    fall below tolerance.  Each step is accepted only if it does not lower
    the average log-likelihood; a scatter step that would is backtracked
    along the segment toward the previous iterate.
    """
    cfg = config or CGGConfig()
    z = np.atleast_2d(np.asarray(samples, dtype=complex))
    z = z[np.linalg.norm(z, axis=1) > 0]
    L, n = z.shape
    if L < 2:
        raise EstimationError("need at least two nonzero samples")
    lo, hi = cfg.search
    sigma = _initial_scatter(z)
    s = 1.0
    ll = cgg_log_likelihood(z, sigma, s)
    history = [ll]
    converged = False
    rounds = 0
    for rounds in range(1, cfg.max_rounds + 1):
        s_new = estimate_shape_s(z, sigma, cfg.search, init=s if rounds > 1 else None)
        ll_s = cgg_log_likelihood(z, sigma, s_new)
        if ll_s < ll:
            s_new, ll_s = s, ll
        new = cgg_scatter_update(z, sigma, s_new)
        if L <= n:
            new = shrink_to_identity(new, "auto", n_samples=L)
        try:
            ll_new = cgg_log_likelihood(z, new, s_new)
        except DecompositionError:
            ll_new = -np.inf
        step = 1.0
        while ll_new < ll_s - 1e-12 * abs(ll_s) and step > 1e-6:
            step /= 2
            cand = (1 - step) * sigma + step * new
            ll_new = cgg_log_likelihood(z, cand, s_new)
        if ll_new < ll_s - 1e-12 * abs(ll_s):
            new, ll_new = sigma, ll_s
        elif step < 1.0:
            new = cand
        ds = abs(s_new - s) / s
        dsig = np.linalg.norm(new - sigma) / np.linalg.norm(sigma)
        s, sigma, ll = s_new, new, ll_new
        history.append(ll)
        if ds < cfg.s_tol and dsig < cfg.scatter_tol:
            converged = True
            break
    at_bound = bool(np.isclose(s, lo, rtol=1e-6) or np.isclose(s, hi, rtol=1e-6))
    return CGGFit(s, sigma, rounds, converged, ll, at_bound, history)
