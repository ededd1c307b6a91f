"""Angular consistency adaptive filter (ACAF).

Selects the shape-statistically-homogeneous pixels (SSHP) of a window:
pixels whose unit-norm temporal vectors share the reference pixel's CACG
shape matrix.  The statistic is the whitened quadratic form
``t = z^H Sigma^-1 z`` of a unit vector, thresholded by parametric
bootstrap quantiles.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .ces_core import (
    diagonal_loading,
    normalize_to_coherence,
    sample_uniform_sphere,
    shrink_to_identity,
    tyler_estimate,
)
from .errors import ConvergenceError, InvalidLagError, ParameterError, ShapeError

log = logging.getLogger(__name__)

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


@dataclass
class WindowSamples:
    """Temporal vectors of one (possibly edge-clipped) window, row-major."""

    vectors: np.ndarray  # (L, N)
    window_shape: tuple
    ref_index: int

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=complex)
        rows, cols = self.window_shape
        if self.vectors.ndim != 2 or self.vectors.shape[0] != rows * cols:
            raise ShapeError(f"{self.vectors.shape[0]} vectors do not fill a {rows}x{cols} window")
        if not 0 <= self.ref_index < rows * cols:
            raise ShapeError("reference index outside the window")

    @property
    def n_samples(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]

    @property
    def ref_rc(self):
        return divmod(self.ref_index, self.window_shape[1])

    @classmethod
    def from_stack(cls, stack, row, col, size):
        """Window of odd side ``size`` around (row, col), clipped at the borders.

        ``stack`` has shape (N, rows, cols).
        """
        _, nr, nc = stack.shape
        h = size // 2
        r0, r1 = max(0, row - h), min(nr, row + h + 1)
        c0, c1 = max(0, col - h), min(nc, col + h + 1)
        block = stack[:, r0:r1, c0:c1]
        shape = block.shape[1:]
        vec = block.reshape(stack.shape[0], -1).T
        return cls(vec, shape, (row - r0) * shape[1] + (col - c0))


@dataclass
class AutocorrProfile:
    values: np.ndarray
    mean_value: float


@dataclass
class TestThresholds:
    q_high: float
    alpha: float
    n_draws: int
    q_low: float | None = None

    def accept(self, t):
        t = np.asarray(t)
        ok = t <= self.q_high
        if self.q_low is not None:
            ok &= t >= self.q_low
        return ok


@dataclass
class SSHPMask:
    selected: np.ndarray  # bool, window_shape
    iterations_used: int = 0
    reversals: int = 0
    fallback_triggered: bool = False
    final_size: int = 0

    def __post_init__(self):
        self.final_size = int(np.count_nonzero(self.selected))


@dataclass
class ACAFConfig:
    alpha: float = 0.05
    n_draws: int = 2000
    max_lag: int = 10
    coherence_floor: float = 0.15
    k_max: int = 10
    refine_k_max: int = 1
    eps: float = 1e-4
    aux_size: int = 5
    calibration: str = "refit"

    def __post_init__(self):
        if not 0 < self.alpha < 0.5:
            raise ParameterError("alpha must lie in (0, 0.5)")
        if self.n_draws < 1000:
            raise ParameterError("n_draws must be >= 1000")
        if self.max_lag < 1 or self.k_max < 0 or self.refine_k_max < 0:
            raise ParameterError("max_lag >= 1, k_max >= 0 required")
        if self.calibration not in ("refit", "plugin"):
            raise ParameterError("calibration must be 'refit' or 'plugin'")


@dataclass
class RefineResult:
    selected: np.ndarray  # bool (L,)
    sigma: np.ndarray
    iterations: int
    small_set: bool = False
    deltas: list = field(default_factory=list)


SHRINK_FACTOR = 2


def _unit(z):
    z = np.asarray(z, dtype=complex)
    norms = np.linalg.norm(z, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(norms > 0, z / norms, 0)


def _tyler(z, init=None):
    try:
        return tyler_estimate(z, init=init)
    except ConvergenceError as exc:
        log.debug("Tyler did not converge, using last iterate")
        return exc.last


def _principal_phase(sigma):
    w, v = np.linalg.eigh(sigma)
    if sigma.shape[0] > 1 and abs(w[-1] - w[-2]) <= 1e-12 * max(abs(w[-1]), 1.0):
        warnings.warn("largest eigenvalue is repeated; alignment is ambiguous", RuntimeWarning, stacklevel=3)
        return np.angle(v[:, np.argmax(w)])
    return np.angle(v[:, -1])


def phase_align(window, sigma=None):
    """Remove the window's common phase history before autocorrelation.

    Every vector is multiplied element-wise by ``exp(-j angle(v_max))`` with
    ``v_max`` the principal eigenvector of the Tyler estimate over all
    nonzero samples (or of ``sigma`` when given).
    """
    if window.dim < 2:
        raise ParameterError("phase alignment needs N >= 2")
    z = window.vectors
    if sigma is None:
        ok = np.linalg.norm(z, axis=1) > 0
        sigma = _tyler(z[ok])
    corr = np.exp(-1j * _principal_phase(sigma))
    return WindowSamples(z * corr, window.window_shape, window.ref_index)


def default_lags(n, max_lag=10):
    return np.arange(1, min(max_lag, n - 1) + 1)


def _autocorr(z_unit, lags):
    z_unit = np.atleast_2d(z_unit)
    n = z_unit.shape[1]
    lags = np.atleast_1d(np.asarray(lags, dtype=int))
    if np.any(lags < 0) or np.any(lags >= n):
        raise InvalidLagError(f"lags must lie in [0, {n - 1}]")
    out = np.empty((z_unit.shape[0], lags.size))
    for k, tau in enumerate(lags):
        out[:, k] = np.abs(np.sum(z_unit[:, : n - tau] * z_unit[:, tau:].conj(), axis=1))
    return out


def autocorr_profile(vector, lags):
    """Empirical autocorrelation magnitudes of a unit vector at the given lags."""
    values = _autocorr(np.asarray(vector, dtype=complex), lags)[0]
    values = np.clip(values, 0.0, 1.0)
    return AutocorrProfile(values, float(values.mean()))


def autocorr_means(vectors, lags):
    """Mean autocorrelation over ``lags`` for each row of ``vectors`` (normalized internally)."""
    return _autocorr(_unit(vectors), lags).mean(axis=1)


def _quad(z, m):
    """Row-wise ``z_i^H M z_i``."""
    return np.sum((z.conj() @ m) * z, axis=1).real


def t_statistics(z_unit, sigma_ref):
    """Vectorized ``z^H Sigma^-1 z`` for rows of ``z_unit``."""
    z = np.atleast_2d(z_unit)
    s = np.asarray(sigma_ref)
    if z.shape[1] != s.shape[0] or s.shape[0] != s.shape[1]:
        raise ShapeError(f"dimension mismatch: vectors {z.shape}, matrix {s.shape}")
    inv = np.linalg.inv(diagonal_loading(s))
    return _quad(z, inv)


def t_statistic(z_tilde, sigma_ref):
    return float(t_statistics(np.asarray(z_tilde)[None, :], sigma_ref)[0])


def sphere_weights(dim, n_draws, rng):
    """Squared moduli ``|u_k|^2`` of uniform sphere draws, shape (n_draws, dim)."""
    return np.abs(sample_uniform_sphere(dim, rng, n_draws)) ** 2


def bootstrap_t(sigma_ref, weights):
    """Bootstrap replicates of t under the matched CACG model.

    With ``A = Sigma^(1/2)`` and ``z = A u / |A u|`` one has
    ``t = 1 / (u^H Sigma u) = 1 / sum_k lambda_k |v_k|^2`` where ``v`` is ``u``
    in the eigenbasis of Sigma, itself uniform on the sphere.  So only the
    eigenvalues and the squared moduli of sphere draws are needed.
    """
    lam = np.linalg.eigvalsh(sigma_ref)
    return 1.0 / (weights @ lam)


def nearest_rank(sorted_values, p):
    n = sorted_values.size
    k = min(max(math.ceil(p * n), 1), n)
    return float(sorted_values[k - 1])


def _sided(sided):
    if sided in ("one", "right", "single"):
        return "one"
    if sided in ("two", "double"):
        return "two"
    raise ParameterError(f"sided must be 'one' or 'two', got {sided!r}")


def bootstrap_thresholds(sigma_ref, alpha, sided="one", n_draws=2000, rng=None, weights=None):
    """Quantile thresholds of t by Monte Carlo parametric bootstrap.

    One-sided: ``q_high = q_{1-alpha}``.  Two-sided: ``(q_{alpha/2}, q_{1-alpha/2})``.
    Quantiles use the nearest-rank rule.  Pass ``weights`` (from
    :func:`sphere_weights`) to reuse one draw set.
    """
    if not 0 < alpha < 0.5:
        raise ParameterError("alpha must lie in (0, 0.5)")
    sided = _sided(sided)
    if weights is None:
        if n_draws < 1000:
            raise ParameterError("n_draws must be >= 1000")
        if rng is None:
            raise ParameterError("rng or weights required")
        weights = sphere_weights(np.shape(sigma_ref)[0], n_draws, rng)
    elif weights.shape[0] < 1000:
        raise ParameterError("need at least 1000 bootstrap draws")
    t = np.sort(bootstrap_t(sigma_ref, weights))
    if sided == "one":
        return TestThresholds(q_high=nearest_rank(t, 1 - alpha), alpha=alpha, n_draws=t.size)
    return TestThresholds(
        q_high=nearest_rank(t, 1 - alpha / 2),
        q_low=nearest_rank(t, alpha / 2),
        alpha=alpha,
        n_draws=t.size,
    )


REPLICA_TOL = 1e-3


def _tyler_batch(x, init, tol=REPLICA_TOL, max_iter=100):
    """Tyler fixed point run on a stack of sample sets ``x`` of shape (R, n, N)."""
    n_dim = x.shape[2]
    xt = np.swapaxes(x, 1, 2)  # (R, N, n)
    xc = x.conj()
    sigma = np.broadcast_to(init, (x.shape[0], n_dim, n_dim)).astype(complex)
    for _ in range(max_iter):
        y = np.linalg.solve(sigma, xt)
        q = np.einsum("rnl,rnl->rl", xt.conj(), y).real
        new = (xt / q[:, None, :]) @ xc
        new = (new + np.swapaxes(new.conj(), 1, 2)) / 2
        new *= n_dim / np.trace(new, axis1=1, axis2=2).real[:, None, None]
        delta = np.linalg.norm(new - sigma, axis=(1, 2)) / np.linalg.norm(sigma, axis=(1, 2))
        sigma = new
        if delta.max() < tol:
            break
    return sigma


def refit_bootstrap_t(sigma_ref, n_fit, draws, fit_draws, n_rep=2, shrink=False, in_sample=False):
    """Bootstrap replicates of t that include the estimation of the shape matrix.

    Each replica fits Tyler on ``n_fit`` CACG draws from ``sigma_ref``
    (shrunk like the real estimate when ``shrink``) and evaluates t of
    fresh draws against that fit.  This matches how a pixel outside the
    current set is tested.  With ``in_sample`` the t values of the fitted
    draws themselves are returned as well, which is the matching reference
    for pixels inside the set.  Work is done in the eigenbasis of
    ``sigma_ref``; t is invariant to that rotation.  Replica fits stop at a
    looser tolerance than the main estimate.

    Returns ``(t_out, t_in)`` with ``t_in`` None unless requested.
    """
    lam = np.linalg.eigvalsh(sigma_ref)
    root = np.sqrt(np.clip(lam, lam[-1] * 1e-12, None))
    n = root.size
    if fit_draws.shape[0] < n_rep * n_fit:
        raise ParameterError("not enough fit draws for the requested replicas")
    x = _unit(fit_draws[: n_rep * n_fit] * root).reshape(n_rep, n_fit, n)
    fits = _tyler_batch(x, np.diag(root**2 * n / np.sum(root**2)))
    if shrink:
        fits = np.stack([shrink_to_identity(f, "auto", n_samples=n_fit) for f in fits])
    invs = np.linalg.inv(fits)
    t_out = []
    for inv, chunk in zip(invs, np.array_split(draws, n_rep)):
        y = _unit(chunk * root)
        t_out.append(_quad(y, inv))
    t_in = np.sum((x.conj() @ invs) * x, axis=2).real.ravel() if in_sample else None
    return np.concatenate(t_out), t_in


def _thresholds(t, alpha, sided):
    t = np.sort(t)
    if sided == "one":
        return TestThresholds(q_high=nearest_rank(t, 1 - alpha), alpha=alpha, n_draws=t.size)
    return TestThresholds(
        q_high=nearest_rank(t, 1 - alpha / 2), q_low=nearest_rank(t, alpha / 2), alpha=alpha, n_draws=t.size
    )


def refine_sshp(
    window,
    init_set,
    sigma0,
    sided,
    alpha,
    k_max,
    autocorr_means,
    pool=None,
    weights=None,
    rng=None,
    n_draws=2000,
    eps=1e-4,
    shrink=True,
    draws=None,
    fit_draws=None,
):
    """Iterative CACG refinement of an SSHP index set.

    Each iteration computes t for every pixel against the current shape
    estimate, keeps the pool members inside the bootstrap acceptance
    region with nonzero mean autocorrelation, and re-fits Tyler on them.
    ``pool`` defaults to every pixel of the window (the set can grow from a
    small seed); pass the initial set itself to only prune it.

    With ``shrink`` the matrix used for whitening and for the bootstrap is
    the Tyler estimate shrunk toward the identity for the current set size.
    A Tyler fit on N+1 pixels is nearly singular and would otherwise push
    every out-of-set pixel into the right tail.

    Returns a :class:`RefineResult`; ``small_set`` is raised when fewer than
    N+1 pixels survive, leaving the caller to fall back.
    """
    z = _unit(window.vectors)
    L, N = z.shape
    init = np.asarray(init_set)
    current = init.copy() if init.dtype == bool else np.isin(np.arange(L), init)
    if not current.any():
        raise ParameterError("initial set is empty")
    in_pool = np.ones(L, bool) if pool is None else np.asarray(pool, bool)
    rbar = np.asarray(autocorr_means)
    if weights is None:
        weights = sphere_weights(N, n_draws, rng if rng is not None else np.random.default_rng(0))
    sigma = np.asarray(sigma0, dtype=complex)
    result = RefineResult(current.copy(), sigma, 0)
    for k in range(1, k_max + 1):
        n_cur = int(current.sum())
        shrunk = shrink and n_cur < SHRINK_FACTOR * N
        test = shrink_to_identity(sigma, "auto", n_samples=n_cur) if shrunk else sigma
        t = t_statistics(z, test)
        if fit_draws is None:
            accept = bootstrap_thresholds(test, alpha, sided, weights=weights).accept(t)
        else:
            in_sample = sided == "two"
            n_rep = max(2, math.ceil(1000 / n_cur)) if in_sample else 2
            t_out, t_in = refit_bootstrap_t(
                sigma, n_cur, draws, fit_draws, n_rep=n_rep, shrink=shrunk, in_sample=in_sample
            )
            accept = _thresholds(t_out, alpha, sided).accept(t)
            if in_sample:
                accept = np.where(current, _thresholds(t_in, alpha, sided).accept(t), accept)
        nxt = in_pool & accept & (rbar != 0)
        result.iterations = k
        if nxt.sum() < N + 1:
            result.selected = nxt
            result.small_set = True
            return result
        new_sigma = _tyler(z[nxt], init=sigma)
        delta = np.linalg.norm(new_sigma - sigma) / np.linalg.norm(sigma)
        result.deltas.append(float(delta))
        sigma, current = new_sigma, nxt
        result.selected, result.sigma = nxt, sigma
        if delta < eps:
            break
    return result


def _neighborhood(shape, rc):
    r, c = rc
    return slice(max(0, r - 1), min(shape[0], r + 2)), slice(max(0, c - 1), min(shape[1], c + 2))


def mask_reversal_check(mask, window):
    """True when the reference pixel is meaningfully part of ``mask``.

    ``mask`` is a boolean grid of the window's shape.  Sums run over the
    (edge-clipped) 3x3 neighborhood of the reference; ``n4`` counts
    selected direct 4-neighbors.
    """
    m = np.asarray(mask, bool).reshape(window.window_shape)
    r, c = window.ref_rc
    total = int(m[_neighborhood(m.shape, (r, c))].sum())
    if total == 0:
        return False
    n4 = 0
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        rr, cc = r + dr, c + dc
        if 0 <= rr < m.shape[0] and 0 <= cc < m.shape[1] and m[rr, cc]:
            n4 += 1
    ref_ok = bool(m[r, c]) and total >= 3
    return (ref_ok or total >= 5) and (n4 / total > 0.2)


def connected_component(mask, seed, connectivity=4):
    """The ``connectivity``-connected component of ``mask`` containing ``seed``."""
    m = np.asarray(mask, bool)
    r, c = seed
    if not (0 <= r < m.shape[0] and 0 <= c < m.shape[1]):
        raise ParameterError("seed outside the grid")
    if not m[r, c]:
        return np.zeros_like(m)
    structure = FOUR_CONNECTED if connectivity == 4 else np.ones((3, 3), bool)
    labels, _ = ndimage.label(m, structure=structure)
    return labels == labels[r, c]


def _mean_coherence(sigma):
    g = np.abs(normalize_to_coherence(sigma))
    iu = np.triu_indices(g.shape[0], 1)
    return float(g[iu].mean()) if iu[0].size else 1.0


def _aux_side(n, window_side, base):
    side = max(base, math.ceil(math.sqrt(n + 1)))
    side += 1 - side % 2
    return min(side, window_side)


def select_sshp(window, config=None, rng=None):
    """Full SSHP selection for one window; returns an :class:`SSHPMask`."""
    cfg = config or ACAFConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    L, N = window.vectors.shape
    shape = window.window_shape
    ref = window.ref_index
    valid = np.linalg.norm(window.vectors, axis=1) > 0

    rr, rc = window.ref_rc

    def aux_box():
        h = _aux_side(N, max(shape), cfg.aux_size) // 2
        box = np.zeros(shape, bool)
        box[max(0, rr - h) : rr + h + 1, max(0, rc - h) : rc + h + 1] = True
        return box.ravel() & valid

    def finish(sel, **kw):
        sel = sel.copy()
        if valid[ref]:
            sel[ref] = True
        return SSHPMask(sel.reshape(shape), **kw)

    def fallback(remaining, **kw):
        # too few leftovers to estimate anything: pad with the pixels nearest the reference
        if remaining.sum() < N + 1:
            remaining = remaining | aux_box()
        return finish(remaining, fallback_triggered=True, **kw)

    if valid.sum() <= N + 1 or N < 2:
        return finish(valid, fallback_triggered=True)

    z = _unit(window.vectors)
    sigma_all = _tyler(z[valid])
    aligned = phase_align(WindowSamples(z, shape, ref), sigma=sigma_all).vectors
    rbar = np.zeros(L)
    rbar[valid] = _autocorr(aligned[valid], default_lags(N, cfg.max_lag)).mean(axis=1)
    draws = sample_uniform_sphere(N, rng, cfg.n_draws)
    weights = np.abs(draws) ** 2
    fit_draws = sample_uniform_sphere(N, rng, max(2 * L, 1000 + L)) if cfg.calibration == "refit" else None

    iterations = 0
    reversals = 0
    while True:
        candidates = rbar != 0
        if candidates.sum() <= N + 1:
            return fallback(candidates, iterations_used=iterations, reversals=reversals)
        # stable ordering keeps ties deterministic
        order = np.argsort(np.where(candidates, -rbar, np.inf), kind="stable")[: N + 1]
        sigma0 = _tyler(z[order])
        if _mean_coherence(sigma0) < cfg.coherence_floor:
            return fallback(candidates, iterations_used=iterations, reversals=reversals)
        res = refine_sshp(
            window, order, sigma0, "one", cfg.alpha, cfg.k_max, rbar, weights=weights, eps=cfg.eps,
            draws=draws, fit_draws=fit_draws,
        )
        iterations += res.iterations
        if res.small_set:
            return fallback(candidates, iterations_used=iterations, reversals=reversals)
        mask = res.selected
        if mask_reversal_check(mask.reshape(shape), window):
            break
        rbar = np.where(mask, 0.0, rbar)
        reversals += 1

    if reversals == 0:
        grid = mask.reshape(shape).copy()
        grid[rr, rc] = True
        comp = connected_component(grid, (rr, rc)).ravel() & valid
        if comp.sum() < N + 1:
            comp |= aux_box()
        if comp.sum() >= N + 1:
            sigma0 = _tyler(z[comp])
            res = refine_sshp(
                window,
                comp,
                sigma0,
                "two",
                cfg.alpha,
                cfg.refine_k_max,
                rbar,
                pool=comp,
                weights=weights,
                eps=cfg.eps,
                draws=draws,
                fit_draws=fit_draws,
            )
            iterations += res.iterations
            mask = res.selected if res.selected.sum() > 0 else comp
        else:
            mask = comp
    return finish(mask, iterations_used=iterations, reversals=reversals)


def window_rng(seed, row, col):
    """Per-window generator derived from (seed, row, col)."""
    return np.random.default_rng([int(seed), int(row), int(col)])


__all__ = [
    "ACAFConfig",
    "AutocorrProfile",
    "SSHPMask",
    "TestThresholds",
    "WindowSamples",
    "autocorr_means",
    "autocorr_profile",
    "bootstrap_thresholds",
    "bootstrap_t",
    "connected_component",
    "mask_reversal_check",
    "phase_align",
    "refine_sshp",
    "select_sshp",
    "sphere_weights",
    "t_statistic",
    "t_statistics",
    "window_rng",
]
