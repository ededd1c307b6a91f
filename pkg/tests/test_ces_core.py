import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import cacg, exp_coherence, random_hpd
from shape2scale.ces_core import (
    MagnitudeLaw,
    auto_shrinkage,
    diagonal_loading,
    elliptical_kurtosis,
    normalize_to_coherence,
    psd_sqrt,
    sample_ces,
    sample_covariance,
    sample_uniform_sphere,
    shrink_to_identity,
    tyler_estimate,
)
from shape2scale.errors import (
    ConvergenceError,
    DecompositionError,
    DegenerateSampleError,
    InvalidDimensionError,
    InvalidScatterError,
    ParameterError,
    RankDeficiencyError,
    ShapeError,
)


class TestMagnitudeLaw:
    @pytest.mark.parametrize("law", [MagnitudeLaw.rayleigh(), MagnitudeLaw.k_texture(0.3), MagnitudeLaw.k_texture(0.6)])
    def test_unit_mean_power(self, law, rng):
        r = law.sample(10, rng, 1_000_000)
        assert np.mean(r**2) == pytest.approx(1.0, rel=0.01)

    def test_texture_second_moment(self, rng):
        # R^2 = tau G / N: E[R^4] = (1 + xi) (N + 1) / N
        n, xi = 8, 0.5
        r2 = MagnitudeLaw.k_texture(xi).sample(n, rng, 400_000) ** 2
        assert np.mean(r2**2) == pytest.approx((1 + xi) * (n + 1) / n, rel=0.03)

    def test_constant(self, rng):
        assert np.all(MagnitudeLaw.constant(2.5).sample(4, rng, 7) == 2.5)

    @pytest.mark.parametrize("kwargs", [dict(tag="lognormal"), dict(tag="k_texture", xi=-1.0), dict(tag="constant", value=0.0)])
    def test_invalid(self, kwargs):
        with pytest.raises(ParameterError):
            MagnitudeLaw(**kwargs)


def test_sphere_draws_unit_norm(rng):
    u = sample_uniform_sphere(6, rng, 5000)
    assert u.shape == (5000, 6)
    np.testing.assert_allclose(np.linalg.norm(u, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.mean(np.abs(u) ** 2, axis=0), 1 / 6, atol=0.01)
    assert sample_uniform_sphere(3, rng).shape == (3,)
    with pytest.raises(InvalidDimensionError):
        sample_uniform_sphere(0, rng)


def test_psd_sqrt(rng):
    m = random_hpd(5, rng)
    a = psd_sqrt(m)
    np.testing.assert_allclose(a @ a, m, atol=1e-10)
    np.testing.assert_allclose(a, a.conj().T, atol=1e-12)
    with pytest.raises(DecompositionError):
        psd_sqrt(np.diag([1.0, -1.0]))
    with pytest.raises(DecompositionError):
        psd_sqrt(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ShapeError):
        psd_sqrt(np.ones((2, 3)))


def test_gaussian_ces_covariance(rng):
    # Rayleigh magnitude with E[R^2] = 1 gives covariance scatter / N
    sigma = exp_coherence(4, 3.0, 0.2).astype(complex)
    z = sample_ces(sigma, MagnitudeLaw.rayleigh(), rng, 200_000)
    np.testing.assert_allclose(sample_covariance(z), sigma / 4, atol=0.01)


class TestTyler:
    def test_trace_and_hermitian(self, rng):
        z = cacg(random_hpd(4, rng), rng, 300)
        s = tyler_estimate(z)
        assert np.trace(s).real == pytest.approx(4.0)
        np.testing.assert_allclose(s, s.conj().T, atol=1e-12)

    def test_identity_on_isotropic_data(self, rng):
        z = sample_uniform_sphere(3, rng, 100_000)
        np.testing.assert_allclose(tyler_estimate(z), np.eye(3), atol=0.02)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 6))
    def test_invariant_to_per_sample_scaling(self, seed, n):
        rng = np.random.default_rng(seed)
        z = cacg(random_hpd(n, rng, 10.0), rng, 10 * n)
        c = rng.uniform(0.01, 100.0, len(z)) * np.exp(1j * rng.uniform(-np.pi, np.pi, len(z)))
        np.testing.assert_allclose(tyler_estimate(z * c[:, None]), tyler_estimate(z), atol=1e-10)

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_affine_equivariance(self, seed):
        rng = np.random.default_rng(seed)
        n = 4
        z = cacg(np.eye(n), rng, 60)
        b = psd_sqrt(random_hpd(n, rng, 20.0))
        s = tyler_estimate(z, tol=1e-12, max_iter=1000)
        expect = b @ s @ b.conj().T
        expect *= n / np.trace(expect).real
        np.testing.assert_allclose(tyler_estimate(z @ b.T, tol=1e-12, max_iter=1000), expect, atol=1e-8)

    def test_convergence_error_carries_last_iterate(self, rng):
        z = cacg(random_hpd(5, rng), rng, 50)
        with pytest.raises(ConvergenceError) as info:
            tyler_estimate(z, max_iter=1)
        assert info.value.last.shape == (5, 5)
        assert np.trace(info.value.last).real == pytest.approx(5.0)
        assert info.value.n_iter == 1

    def test_input_errors(self, rng):
        z = cacg(np.eye(4), rng, 10)
        with pytest.raises(RankDeficiencyError):
            tyler_estimate(z[:3])
        bad = z.copy()
        bad[2] = 0
        with pytest.raises(DegenerateSampleError):
            tyler_estimate(bad)
        with pytest.raises(ParameterError):
            tyler_estimate(z, tol=0)


class TestNormalizeAndShrink:
    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 8))
    def test_coherence_idempotent(self, seed, n):
        m = random_hpd(n, np.random.default_rng(seed), 100.0)
        g = normalize_to_coherence(m)
        np.testing.assert_allclose(np.diag(g), 1.0)
        np.testing.assert_allclose(normalize_to_coherence(g), g, atol=1e-14)
        assert np.all(np.abs(g) <= 1 + 1e-12)

    def test_coherence_rejects_bad_diagonal(self):
        with pytest.raises(InvalidScatterError):
            normalize_to_coherence(np.diag([1.0, 0.0]))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), rho=st.floats(0.0, 1.0))
    def test_shrink_preserves_trace(self, seed, rho):
        m = random_hpd(5, np.random.default_rng(seed))
        out = shrink_to_identity(m, rho)
        assert np.trace(out).real == pytest.approx(np.trace(m).real)
        assert np.linalg.eigvalsh(out)[0] >= np.linalg.eigvalsh(m)[0] - 1e-9

    def test_shrink_endpoints(self, rng):
        m = random_hpd(3, rng)
        np.testing.assert_allclose(shrink_to_identity(m, 0.0), m)
        np.testing.assert_allclose(shrink_to_identity(m, 1.0), np.trace(m).real / 3 * np.eye(3))
        with pytest.raises(ParameterError):
            shrink_to_identity(m, 1.5)
        with pytest.raises(ParameterError):
            shrink_to_identity(m, "oas")
        with pytest.raises(ParameterError):
            shrink_to_identity(m, "auto")

    def test_auto_coefficient(self, rng):
        assert auto_shrinkage(np.eye(4), 10) == 1.0
        strong = exp_coherence(10, 20.0, 0.3)
        assert auto_shrinkage(strong, 10_000) < 0.01
        assert 0 < auto_shrinkage(strong, 12) < auto_shrinkage(strong, 12, kurtosis=1.0) <= 1

    def test_auto_improves_conditioning(self, rng):
        z = sample_ces(exp_coherence(8, 10.0, 0.3), MagnitudeLaw.rayleigh(), rng, 8)
        scm = sample_covariance(z)
        assert np.linalg.cond(shrink_to_identity(scm, "auto", n_samples=8)) < np.linalg.cond(scm)

    def test_kurtosis(self, rng):
        sigma = exp_coherence(6, 4.0, 0.2)
        gauss = sample_ces(sigma, MagnitudeLaw.rayleigh(), rng, 200_000)
        heavy = sample_ces(sigma, MagnitudeLaw.k_texture(0.5), rng, 200_000)
        assert abs(elliptical_kurtosis(gauss)) < 0.02
        # texture variance xi shows up directly as the marginal kurtosis
        assert elliptical_kurtosis(heavy) == pytest.approx(0.5, abs=0.05)

    def test_diagonal_loading(self):
        m = np.diag([1.0, 1e-14])
        assert np.linalg.cond(diagonal_loading(m)) < 1e12
        ok = np.diag([1.0, 2.0])
        assert diagonal_loading(ok) is ok
