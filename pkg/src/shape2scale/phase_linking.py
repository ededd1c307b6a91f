"""Phase linking: one phase per acquisition from a coherence matrix or samples.

Conventions: ``Gamma[m, n] ~ E[z_m conj(z_n)]`` and the phase model is
``G * w w^H`` with ``w = exp(1j * theta)``, so ``theta[m] - theta[n]``
estimates ``arg Gamma[m, n]``.  Outputs are referenced to acquisition 0
(``theta[0] == 0``) and wrapped to ``(-pi, pi]``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .ces_core import diagonal_loading
from .errors import ConditioningError, InvariantViolation, ParameterError, ShapeError

log = logging.getLogger(__name__)

GTOL = 1e-8
MM_TOL = 1e-10
MM_MAX_ITER = 1000


@dataclass
class PhaseHistory:
    """Linked phases plus solver metadata."""

    theta: np.ndarray
    converged: bool = True
    informative: bool = True
    n_iter: int = 0
    objective: float = float("nan")
    history: list = field(default_factory=list)


def wrap(theta):
    t = np.angle(np.exp(1j * np.asarray(theta, dtype=float)))
    return np.where(t <= -np.pi, t + 2 * np.pi, t)


def realign_reference(theta):
    """Shift so that the first acquisition has phase 0, wrapped to (-pi, pi]."""
    theta = np.asarray(theta, dtype=float)
    out = wrap(theta - theta[0])
    out[0] = 0.0
    return out


def _check_square(m, name):
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {m.shape}")
    return m


def _check_magnitude(g):
    g = _check_square(g, "magnitude matrix")
    if np.iscomplexobj(g):
        if np.abs(g.imag).max() > 1e-12 * max(1.0, np.abs(g).max()):
            raise ParameterError("magnitude matrix must be real")
        g = g.real
    if np.abs(g - g.T).max() > 1e-10 * max(1.0, np.abs(g).max()):
        raise ParameterError("magnitude matrix must be symmetric")
    return np.asarray(g, dtype=float)


def _inverse_magnitude(g):
    g = diagonal_loading(_check_magnitude(g))
    try:
        inv = np.linalg.inv(g)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError("coherence magnitude matrix is singular") from exc
    if not np.all(np.isfinite(inv)) or np.linalg.cond(g) > 1e14:
        raise ConditioningError("coherence magnitude matrix is ill-conditioned")
    return (inv + inv.T) / 2


def init_phases(gamma):
    """Phase of the principal eigenvector, referenced to acquisition 0."""
    gamma = _check_square(gamma, "coherence matrix")
    _, v = np.linalg.eigh((gamma + gamma.conj().T) / 2)
    return realign_reference(np.angle(v[:, -1]))


def _is_trivial(gamma):
    off = gamma - np.diag(np.diag(gamma))
    return np.abs(off).max() < 1e-12


def _lbfgs(fun, x0, gtol, max_iter):
    res = minimize(
        fun, x0, jac=True, method="L-BFGS-B",
        options={"gtol": gtol, "ftol": 1e-15, "maxiter": max_iter, "maxcor": 20},
    )
    _, g = fun(res.x)
    ok = bool(np.max(np.abs(g)) < gtol * 10 or res.success)
    return res, ok


def pta_quadratic(w, b):
    """``w^H B w`` and its gradient with respect to the phases of ``w``."""
    bw = b @ w
    f = np.real(np.vdot(w, bw))
    grad = -2 * np.imag(w * np.conj(bw))
    return f, grad


def pta_phases(gamma_hat, magnitude=None, init=None, gtol=GTOL, max_iter=500):
    """Phase triangulation: minimize ``w^H (|G|^-1 o Gamma) w`` over phases.

    ``magnitude`` defaults to ``|gamma_hat|``.
    """
    gamma_hat = _check_square(np.asarray(gamma_hat, dtype=complex), "coherence matrix")
    n = gamma_hat.shape[0]
    if _is_trivial(gamma_hat):
        return PhaseHistory(np.zeros(n), converged=True, informative=False)
    mag = np.abs(gamma_hat) if magnitude is None else magnitude
    b = _inverse_magnitude(mag) * gamma_hat
    theta0 = init_phases(gamma_hat) if init is None else realign_reference(init)

    def fun(x):
        th = np.concatenate(([0.0], x))
        f, g = pta_quadratic(np.exp(1j * th), b)
        return f, g[1:]

    res, ok = _lbfgs(fun, theta0[1:], gtol, max_iter)
    theta = realign_reference(np.concatenate(([0.0], res.x)))
    return PhaseHistory(theta, converged=ok, n_iter=int(res.nit), objective=float(res.fun))


def cgg_mle_objective(theta_tail, z, m, s):
    """Mean of ``q_i**s`` with ``q_i = a_i^H M a_i``, ``a_i = exp(-1j theta) * z_i``.

    Returns the value and its gradient with respect to ``theta[1:]``.
    """
    th = np.concatenate(([0.0], theta_tail))
    a = z * np.exp(-1j * th)
    ma = a @ m
    q = np.real(np.sum(np.conj(a) * ma, axis=1))
    q = np.maximum(q, 1e-300)
    qs = q**s
    dq = -2 * np.imag(np.conj(a) * ma)
    grad = (s * qs / q) @ dq / z.shape[0]
    return float(qs.mean()), grad[1:]


def cgg_mle_phases(samples, magnitude, s, scale=None, init=None, gtol=GTOL, max_iter=500):
    """ML phase linking under the CGG model with shape ``s``.

    Parameters
    ----------
    samples : ndarray, shape (L, N)
        Homogeneous-pixel vectors.
    magnitude : ndarray, shape (N, N)
        Estimated coherence magnitude matrix.
    s : float
        CGG shape parameter.
    scale : ndarray, shape (N,), optional
        Per-acquisition power used to normalize the samples, typically the
        diagonal of the fitted scatter matrix.  Defaults to the sample power.
    init : ndarray, optional
        Starting phases; defaults to the principal-eigenvector phases of the
        sample coherence.
    """
    z = np.atleast_2d(np.asarray(samples, dtype=complex))
    L, n = z.shape
    if not s > 0:
        raise ParameterError("s must be > 0")
    m = _inverse_magnitude(magnitude)
    if m.shape[0] != n:
        raise ShapeError("magnitude matrix does not match sample dimension")
    if scale is None:
        scale = np.mean(np.abs(z) ** 2, axis=0)
    scale = np.asarray(scale, dtype=float)
    if np.any(~(scale > 0)):
        raise ParameterError("scale must be positive")
    z = z / np.sqrt(scale)
    z = z[np.linalg.norm(z, axis=1) > 0]
    if init is None:
        c = z.T @ z.conj() / max(len(z), 1)
        init = init_phases(c)
    x0 = realign_reference(init)[1:]
    res, ok = _lbfgs(lambda x: cgg_mle_objective(x, z, m, s), x0, gtol, max_iter)
    theta = realign_reference(np.concatenate(([0.0], res.x)))
    return PhaseHistory(theta, converged=ok, n_iter=int(res.nit), objective=float(res.fun))


def cfpl_objective(w, magnitude, gamma_hat):
    return float(np.linalg.norm(magnitude * np.outer(w, w.conj()) - gamma_hat))


def cfpl_phases(gamma_hat, magnitude=None, init=None, tol=MM_TOL, max_iter=MM_MAX_ITER, strict=True):
    """Covariance-fitting phase linking by majorization-minimization.

    Minimizes ``||G o w w^H - Gamma||_F`` over unit-modulus ``w``, which is
    maximizing ``w^H (G o Gamma) w``.  Each step sets
    ``w = exp(1j * angle((Psi + c I) w))`` with ``c`` making the matrix PSD,
    so the objective never increases.  The objective sequence is kept in
    ``history``; with ``strict`` an increase beyond round-off raises
    InvariantViolation.
    """
    gamma_hat = _check_square(np.asarray(gamma_hat, dtype=complex), "coherence matrix")
    n = gamma_hat.shape[0]
    mag = np.abs(gamma_hat) if magnitude is None else _check_magnitude(magnitude)
    psi = mag * gamma_hat
    psi = (psi + psi.conj().T) / 2
    if _is_trivial(psi):
        return PhaseHistory(np.zeros(n), converged=True, informative=False)
    lam = np.linalg.eigvalsh(psi)[0]
    if lam < 0:
        psi = psi - lam * np.eye(n)
    theta0 = init_phases(gamma_hat) if init is None else realign_reference(init)
    w = np.exp(1j * theta0)
    f = cfpl_objective(w, mag, gamma_hat)
    hist = [f]
    converged = False
    k = 0
    for k in range(1, max_iter + 1):
        v = psi @ w
        v = np.where(np.abs(v) > 0, v, w)
        w = np.exp(1j * np.angle(v))
        f_new = cfpl_objective(w, mag, gamma_hat)
        hist.append(f_new)
        if f_new > f + 1e-10 * max(1.0, f):
            msg = f"MM objective increased from {f:.6g} to {f_new:.6g}"
            if strict:
                raise InvariantViolation(msg)
            log.warning(msg)
        rel = abs(f - f_new) / max(f, 1e-300)
        f = f_new
        if rel < tol:
            converged = True
            break
    return PhaseHistory(realign_reference(np.angle(w)), converged=converged, n_iter=k, objective=f, history=hist)


def phase_stat(z, theta):
    """Mean over pairs i<j of ``cos(theta_i - theta_j - arg(z_i conj z_j))``.

    Equal to 1 when the linked phases reproduce every interferogram phase.
    """
    z = np.asarray(z, dtype=complex)
    theta = np.asarray(theta, dtype=float)
    if z.shape != theta.shape or z.ndim != 1:
        raise ShapeError("z and theta must be 1-D of equal length")
    n = z.size
    if n < 2:
        raise ParameterError("need at least two acquisitions")
    if np.any(z == 0):
        raise ParameterError("zero-amplitude entry has undefined phase")
    r = theta - np.angle(z)
    total = np.abs(np.exp(1j * r).sum()) ** 2
    return float((total - n) / (n * (n - 1)))
