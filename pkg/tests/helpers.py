"""Independent reference implementations used as test oracles."""
import numpy as np
from scipy.special import gammaln


def exp_coherence(n, tau, p, dt=1.0):
    lag = np.abs(np.subtract.outer(np.arange(n), np.arange(n))) * dt
    return p + (1 - p) * np.exp(-lag / (2 * tau))


def ccg_logpdf(z, sigma):
    """Circular complex Gaussian log density, written out directly."""
    n = sigma.shape[0]
    _, logdet = np.linalg.slogdet(sigma)
    q = np.real(np.einsum("li,ij,lj->l", z.conj(), np.linalg.inv(sigma), z))
    return -n * np.log(np.pi) - logdet - q


def cacg(sigma, rng, size):
    """CACG draws as normalized complex Gaussians (Cholesky root)."""
    n = sigma.shape[0]
    c = np.linalg.cholesky(sigma)
    g = (rng.standard_normal((size, n)) + 1j * rng.standard_normal((size, n))) / np.sqrt(2)
    x = g @ c.T
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def random_hpd(n, rng, cond=50.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    lam = np.geomspace(1.0, cond, n)
    return (q * lam) @ q.conj().T


def sphere_log_area(n):
    """log of the surface measure factor pi^N / Gamma(N) of complex N-space."""
    return n * np.log(np.pi) - gammaln(n)
