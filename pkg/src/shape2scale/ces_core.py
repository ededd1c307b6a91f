"""Complex elliptical model primitives.

Sampling from CES laws through the stochastic representation
``z = R * A @ u``, Tyler's shape-matrix M-estimator, shrinkage toward the
identity and normalization of a scatter matrix to a coherence matrix.

Sample sets are arrays of shape ``(L, N)``: one row per pixel, one column
per acquisition.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    ConvergenceError,
    DecompositionError,
    DegenerateSampleError,
    InvalidDimensionError,
    InvalidScatterError,
    ParameterError,
    RankDeficiencyError,
    ShapeError,
)

TYLER_TOL = 1e-6
TYLER_MAX_ITER = 100
LOADING_COND = 1e12
LOADING_EPS = 1e-9


@dataclass(frozen=True)
class MagnitudeLaw:
    """Law of the random magnitude ``R`` in ``z = R * A @ u``.

    Normalization: ``rayleigh`` and ``k_texture`` are scaled so that
    ``E[R**2] = 1``; with ``R**2 = tau * G / N``, ``G ~ Gamma(N, 1)`` the
    vector ``A @ u * R`` is exactly ``CN(0, Sigma / N)``.  For ``k_texture``
    the texture ``tau`` is Gamma distributed with unit mean and variance
    ``xi``.  ``constant`` returns ``R = value``.
    """

    tag: str = "rayleigh"
    xi: float = 0.0
    value: float = 1.0

    def __post_init__(self):
        if self.tag not in ("rayleigh", "k_texture", "constant"):
            raise ParameterError(f"unknown magnitude law {self.tag!r}")
        if not np.isfinite(self.xi) or self.xi < 0:
            raise ParameterError("texture variance xi must be finite and >= 0")
        if self.tag == "constant" and not self.value > 0:
            raise ParameterError("constant magnitude must be > 0")

    @classmethod
    def rayleigh(cls):
        return cls("rayleigh")

    @classmethod
    def k_texture(cls, xi):
        return cls("k_texture", xi=float(xi))

    @classmethod
    def constant(cls, value=1.0):
        return cls("constant", value=float(value))

    def sample(self, dim, rng, size):
        """Draw ``size`` magnitudes for vectors of dimension ``dim``."""
        if self.tag == "constant":
            return np.full(size, self.value)
        g = rng.standard_gamma(dim, size=size) / dim
        if self.tag == "k_texture" and self.xi > 0:
            g = g * rng.gamma(1.0 / self.xi, self.xi, size=size)
        return np.sqrt(g)


def sample_uniform_sphere(dim, rng, size=None):
    """Uniform draws on the complex unit hypersphere in C^dim.

    Returns shape ``(dim,)`` when ``size`` is None, else ``(size, dim)``.
    """
    if int(dim) < 1:
        raise InvalidDimensionError(f"dimension must be >= 1, got {dim}")
    n = 1 if size is None else int(size)
    g = rng.standard_normal((n, dim)) + 1j * rng.standard_normal((n, dim))
    u = g / np.linalg.norm(g, axis=1, keepdims=True)
    return u[0] if size is None else u


def psd_sqrt(matrix):
    """Hermitian square root via eigendecomposition; rejects non-PD input."""
    m = np.asarray(matrix)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {m.shape}")
    scale = max(np.abs(m).max(), np.finfo(float).tiny)
    if np.abs(m - m.conj().T).max() > 1e-10 * scale:
        raise DecompositionError("matrix is not Hermitian")
    w, v = np.linalg.eigh((m + m.conj().T) / 2)
    if w[0] <= 0:
        raise DecompositionError(f"matrix is not positive definite (min eigenvalue {w[0]:.3g})")
    return (v * np.sqrt(w)) @ v.conj().T


def sample_ces(scatter, law, rng, size=None):
    """Draw CES vectors ``z = R * A @ u`` with ``A @ A^H = scatter``."""
    a = psd_sqrt(scatter)
    dim = a.shape[0]
    n = 1 if size is None else int(size)
    u = sample_uniform_sphere(dim, rng, n)
    r = law.sample(dim, rng, n)
    z = r[:, None] * (u @ a.T)
    return z[0] if size is None else z


def diagonal_loading(matrix):
    """Add ``eps * tr/N * I`` when the condition number exceeds 1e12."""
    m = np.asarray(matrix)
    if np.linalg.cond(m) > LOADING_COND:
        n = m.shape[0]
        return m + LOADING_EPS * (np.trace(m).real / n) * np.eye(n)
    return m


def _as_samples(samples):
    z = np.asarray(samples)
    if z.ndim == 1:
        z = z[None, :]
    if z.ndim != 2:
        raise ShapeError(f"samples must be (L, N), got shape {z.shape}")
    return z.astype(complex, copy=False)


def tyler_estimate(samples, tol=TYLER_TOL, max_iter=TYLER_MAX_ITER, init=None):
    """Tyler's M-estimator of the shape matrix, normalized to trace N.

    Parameters
    ----------
    samples : array_like, shape (L, N)
        Complex sample vectors; they need not be unit norm.
    tol : float
        Stop when the relative Frobenius change between iterates is below it.
    max_iter : int
        Iteration cap; exceeding it raises ConvergenceError with the last
        iterate attached.
    init : array_like, optional
        Starting matrix.  Defaults to the identity.

    Returns
    -------
    ndarray, shape (N, N)
    """
    z = _as_samples(samples)
    L, N = z.shape
    if tol <= 0:
        raise ParameterError("tol must be > 0")
    if L < N:
        raise RankDeficiencyError(f"need at least N={N} samples, got L={L}")
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        raise DegenerateSampleError("zero-norm or non-finite sample vector")
    x = (z / norms[:, None]).T  # (N, L), unit columns
    xh = x.conj().T
    sigma = np.eye(N, dtype=complex) if init is None else np.array(init, dtype=complex)
    sigma = N * sigma / np.trace(sigma).real
    for k in range(1, max_iter + 1):
        try:
            c = np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError as exc:
            raise RankDeficiencyError("iterate lost positive definiteness") from exc
        w = solve_triangular(c, x, lower=True, check_finite=False)
        q = np.einsum("nl,nl->l", w.real, w.real) + np.einsum("nl,nl->l", w.imag, w.imag)
        new = (x / q) @ xh
        new = (new + new.conj().T) * (N / (2 * np.trace(new).real))
        delta = np.linalg.norm(new - sigma) / np.linalg.norm(sigma)
        sigma = new
        if delta < tol:
            return sigma
    raise ConvergenceError(
        f"Tyler iteration did not reach tol={tol} in {max_iter} iterations",
        last=sigma,
        n_iter=max_iter,
    )


def sample_covariance(samples):
    z = _as_samples(samples)
    return z.T @ z.conj() / z.shape[0]


def normalize_to_coherence(scatter):
    """Unit-diagonal normalization ``S_ij / sqrt(S_ii S_jj)``."""
    s = np.asarray(scatter)
    d = np.real(np.diag(s))
    if np.any(~(d > 0)):
        raise InvalidScatterError("scatter matrix needs a strictly positive diagonal")
    inv = 1.0 / np.sqrt(d)
    gamma = s * inv[:, None] * inv[None, :]
    np.fill_diagonal(gamma, 1.0)
    return gamma


def elliptical_kurtosis(samples):
    """Marginal elliptical kurtosis estimate (0 for circular Gaussian data)."""
    z = _as_samples(samples)
    p = np.abs(z) ** 2
    m2 = p.mean(axis=0)
    m4 = (p**2).mean(axis=0)
    ok = m2 > 0
    if not np.any(ok):
        return 0.0
    return float(np.mean(m4[ok] / (2 * m2[ok] ** 2)) - 1.0)


def auto_shrinkage(matrix, n_samples, kurtosis=0.0):
    """Plug-in coefficient for :func:`shrink_to_identity`.

    ``rho = (N/L)(1+k) / ((N/L)(1+k) + gap)`` where ``gap`` is the
    bias-corrected sphericity ``N tr(M^2) / tr(M)^2 - N/L - 1`` clipped to
    ``[0, N-1]``.
    """
    m = np.asarray(matrix)
    n = m.shape[0]
    if n_samples is None or n_samples < 1:
        raise ParameterError("auto shrinkage needs the sample count")
    tr = np.trace(m).real
    ratio = n / float(n_samples)
    spher = n * np.sum(np.abs(m) ** 2) / tr**2
    gap = float(np.clip(spher - ratio - 1.0, 0.0, n - 1.0))
    infl = ratio * max(1.0 + kurtosis, 1e-3)
    if infl + gap == 0:
        return 0.0
    return float(min(1.0, infl / (infl + gap)))


def shrink_to_identity(matrix, coefficient="auto", n_samples=None, kurtosis=0.0):
    """``(1 - rho) M + rho tr(M)/N I``; ``coefficient='auto'`` needs ``n_samples``."""
    m = np.asarray(matrix)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {m.shape}")
    if isinstance(coefficient, str):
        if coefficient != "auto":
            raise ParameterError(f"unknown shrinkage mode {coefficient!r}")
        rho = auto_shrinkage(m, n_samples, kurtosis)
    else:
        rho = float(coefficient)
        if not 0.0 <= rho <= 1.0:
            raise ParameterError(f"shrinkage coefficient must be in [0, 1], got {rho}")
    if rho == 0.0:
        return m.copy()
    n = m.shape[0]
    return (1 - rho) * m + rho * (np.trace(m).real / n) * np.eye(n)
