import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import exp_coherence
from shape2scale.ces_core import MagnitudeLaw, normalize_to_coherence, sample_ces, sample_covariance
from shape2scale.errors import InvariantViolation, ParameterError, ShapeError
from shape2scale.phase_linking import (
    cfpl_objective,
    cfpl_phases,
    cgg_mle_objective,
    cgg_mle_phases,
    init_phases,
    phase_stat,
    pta_phases,
    pta_quadratic,
    realign_reference,
    wrap,
)


def consistent(n, rng, tau=5.0, p=0.2):
    theta = realign_reference(rng.uniform(-np.pi, np.pi, n))
    g = exp_coherence(n, tau, p)
    w = np.exp(1j * theta)
    return theta, g, g * np.outer(w, w.conj())


def noisy_sample(n, rng, L=60, xi=0.0):
    theta, g, gamma = consistent(n, rng)
    law = MagnitudeLaw.k_texture(xi) if xi else MagnitudeLaw.rayleigh()
    z = sample_ces(gamma, law, rng, L)
    return theta, z, normalize_to_coherence(sample_covariance(z))


def fd_grad(f, x, h=1e-6):
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


class TestHelpers:
    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=10))
    def test_wrap_range(self, values):
        w = wrap(values)
        assert np.all(w > -np.pi) and np.all(w <= np.pi)
        np.testing.assert_allclose(np.exp(1j * w), np.exp(1j * np.array(values)), atol=1e-9)

    def test_realign(self):
        t = realign_reference([1.0, 2.0, 1.0 - np.pi])
        np.testing.assert_allclose(t, [0.0, 1.0, np.pi])

    def test_phase_stat(self, rng):
        theta = rng.uniform(-np.pi, np.pi, 6)
        z = 3.0 * np.exp(1j * (theta + 0.4))
        assert phase_stat(z, theta) == pytest.approx(1.0)
        assert phase_stat(np.exp(1j * np.array([0, np.pi])), np.zeros(2)) == pytest.approx(-1.0)
        with pytest.raises(ShapeError):
            phase_stat(z, theta[:3])
        with pytest.raises(ParameterError):
            phase_stat(np.zeros(3, complex), np.zeros(3))


class TestNoiseless:
    @pytest.mark.parametrize("n", [2, 5, 15])
    def test_all_linkers_recover(self, n, rng):
        theta, g, gamma = consistent(n, rng)
        for est in (pta_phases(gamma), cfpl_phases(gamma), init_phases(gamma)):
            th = getattr(est, "theta", est)
            np.testing.assert_allclose(wrap(th - theta), 0.0, atol=1e-6)

    def test_cgg_mle_recovers_from_coherent_samples(self, rng):
        # rank-one data: every sample carries the exact phase history
        n = 6
        theta = realign_reference(rng.uniform(-np.pi, np.pi, n))
        z = (rng.standard_normal(40) + 1j * rng.standard_normal(40))[:, None] * np.exp(1j * theta)
        res = cgg_mle_phases(z, exp_coherence(n, 5.0, 0.2), 0.7, init=np.zeros(n))
        np.testing.assert_allclose(wrap(res.theta - theta), 0.0, atol=1e-6)

    def test_identity_is_not_informative(self):
        assert not pta_phases(np.eye(4)).informative
        assert not cfpl_phases(np.eye(4)).informative


class TestAgreement:
    def test_two_acquisition_cfpl(self, rng):
        for _ in range(20):
            _, _, gamma = noisy_sample(2, rng, L=10)
            th = cfpl_phases(gamma).theta
            assert wrap(th[0] - th[1] - np.angle(gamma[0, 1])) == pytest.approx(0.0, abs=1e-10)

    def test_cgg_mle_at_gaussian_shape_matches_pta(self, rng):
        for _ in range(5):
            _, z, gamma = noisy_sample(8, rng)
            mag = np.abs(gamma)
            a = cgg_mle_phases(z, mag, 1.0, gtol=1e-10).theta
            b = pta_phases(gamma, mag, gtol=1e-10).theta
            assert np.max(np.abs(wrap(a - b))) < 1e-4

    def test_linkers_close_on_noisy_data(self, rng):
        theta, z, gamma = noisy_sample(10, rng, L=200)
        for th in (pta_phases(gamma).theta, cfpl_phases(gamma).theta, cgg_mle_phases(z, np.abs(gamma), 0.5).theta):
            assert np.sqrt(np.mean(wrap(th - theta) ** 2)) < 0.3


class TestMM:
    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(3, 12))
    def test_objective_nonincreasing(self, seed, n):
        rng = np.random.default_rng(seed)
        _, _, gamma = noisy_sample(n, rng, L=2 * n)
        res = cfpl_phases(gamma, init=rng.uniform(-np.pi, np.pi, n))
        h = np.array(res.history)
        assert np.all(np.diff(h) <= 1e-12 * h[:-1])
        assert res.objective == pytest.approx(cfpl_objective(np.exp(1j * res.theta), np.abs(gamma), gamma))

    def test_monotone_with_external_magnitude(self, rng):
        _, _, gamma = noisy_sample(6, rng, L=12)
        res = cfpl_phases(gamma, magnitude=exp_coherence(6, 3.0, 0.1), init=np.zeros(6), strict=True)
        assert res.converged and np.all(np.diff(res.history) <= 1e-12)


class TestGradients:
    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 8))
    def test_pta_gradient(self, seed, n):
        rng = np.random.default_rng(seed)
        _, _, gamma = noisy_sample(n, rng, L=3 * n)
        b = np.linalg.inv(np.abs(gamma) + np.eye(n)) * gamma
        b = (b + b.conj().T) / 2
        x = rng.uniform(-np.pi, np.pi, n)
        f = lambda v: pta_quadratic(np.exp(1j * v), b)[0]  # noqa: E731
        g = pta_quadratic(np.exp(1j * x), b)[1]
        np.testing.assert_allclose(g, fd_grad(f, x), rtol=1e-5, atol=1e-5 * np.abs(g).max())

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 8), s=st.floats(0.1, 3.0))
    def test_cgg_mle_gradient(self, seed, n, s):
        rng = np.random.default_rng(seed)
        _, z, gamma = noisy_sample(n, rng, L=5 * n)
        m = np.linalg.inv(np.abs(gamma) + 0.1 * np.eye(n))
        x = rng.uniform(-np.pi, np.pi, n - 1)
        g = cgg_mle_objective(x, z, m, s)[1]
        num = fd_grad(lambda v: cgg_mle_objective(v, z, m, s)[0], x)
        np.testing.assert_allclose(g, num, rtol=1e-5, atol=1e-5 * np.abs(g).max())


class TestInputs:
    def test_magnitude_checks(self, rng):
        _, _, gamma = noisy_sample(4, rng)
        asym = np.abs(gamma)
        asym[0, 1] += 0.3
        with pytest.raises(ParameterError):
            pta_phases(gamma, asym)
        with pytest.raises(ParameterError):
            pta_phases(gamma, np.abs(gamma) * (1 + 0.5j))
        with pytest.raises(ShapeError):
            cfpl_phases(np.ones((2, 3)))

    def test_cgg_mle_inputs(self, rng):
        _, z, gamma = noisy_sample(4, rng)
        with pytest.raises(ParameterError):
            cgg_mle_phases(z, np.abs(gamma), 0.0)
        with pytest.raises(ParameterError):
            cgg_mle_phases(z, np.abs(gamma), 1.0, scale=np.zeros(4))
        with pytest.raises(ShapeError):
            cgg_mle_phases(z, np.eye(3), 1.0)
