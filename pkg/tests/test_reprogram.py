import numpy as np
import pytest
from scipy import integrate, stats

from inrep_lab.gradcore import UsageError
from inrep_lab.landscape import DomainError
from inrep_lab.mixture import default_spec
from inrep_lab.oracle import TwoModeOracle1D
from inrep_lab.reprogram import (GaussianNoiseOracle, Posterior, UniformNoiseOracle, component_posterior_1d,
                                 constant_posterior, demo_1d, mixture_posterior_2d, rejection_sample,
                                 reweighted_density, threshold_posterior)

ORACLE = TwoModeOracle1D()
G1 = UniformNoiseOracle(ORACLE)


class TestDensity:
    def test_constant_posterior_is_noise_density(self):
        z = np.linspace(0.01, 0.99, 17)
        np.testing.assert_array_equal(reweighted_density(G1, constant_posterior([0.3, 0.7]), 1, z), G1.noise_pdf(z))

    @pytest.mark.parametrize("post", [threshold_posterior(ORACLE), component_posterior_1d(ORACLE)], ids=["hard", "soft"])
    def test_integrates_to_one(self, post):
        val, _ = integrate.quad(lambda z: reweighted_density(G1, post, 0, np.array([z]))[0], 0, 1,
                                points=[0.5], limit=200)
        assert val == pytest.approx(1.0, abs=1e-3)

    def test_integrates_to_one_2d(self):
        g = GaussianNoiseOracle(default_spec())
        post = mixture_posterior_2d(default_spec())
        h = 0.1
        grid = np.arange(-6, 6 + h / 2, h)
        zz = np.stack(np.meshgrid(grid, grid), axis=-1).reshape(-1, 2)
        assert reweighted_density(g, post, 3, zz).sum() * h * h == pytest.approx(1.0, abs=1e-3)

    def test_zero_where_posterior_vanishes(self):
        # z = 0.9 maps to x > 0, which the hard posterior assigns to class 1
        assert reweighted_density(G1, threshold_posterior(ORACLE), 0, np.array([0.9]))[0] == 0.0

    def test_zero_prior(self):
        post = Posterior(lambda x: np.tile([1.0, 0.0], (len(np.ravel(x)), 1)), np.array([1.0, 0.0]))
        with pytest.raises(DomainError):
            reweighted_density(G1, post, 1, np.array([0.5]))

    def test_rows_must_sum_to_one(self):
        bad = Posterior(lambda x: np.tile([0.5, 0.6], (len(np.ravel(x)), 1)), np.array([0.5, 0.5]))
        with pytest.raises(DomainError):
            bad(np.zeros(3))

    def test_class_range(self):
        with pytest.raises(UsageError):
            reweighted_density(G1, constant_posterior([0.5, 0.5]), 2, np.array([0.5]))


class TestRejection:
    def test_constant_posterior_keeps_noise_law(self):
        res = rejection_sample(G1, constant_posterior([0.4, 0.6]), 0, 20_000, seed=1)
        assert stats.kstest(res.noise, "uniform").pvalue > 1e-3

    def test_acceptance_rate(self):
        post = component_posterior_1d(TwoModeOracle1D(weights=(0.3, 0.7)))
        n_prop = 100_000
        res = rejection_sample(UniformNoiseOracle(TwoModeOracle1D(weights=(0.3, 0.7))), post, 0, 1, seed=2,
                               batch=n_prop)
        assert res.proposals == n_prop
        se = np.sqrt(0.3 * 0.7 / n_prop)
        assert abs(res.acceptance_rate - 0.3) <= 3 * se

    def test_tiny_prior_rejected(self):
        post = Posterior(lambda x: np.tile([1 - 1e-7, 1e-7], (len(np.ravel(x)), 1)), np.array([1 - 1e-7, 1e-7]))
        with pytest.raises(UsageError):
            rejection_sample(G1, post, 1, 10, seed=0)

    def test_deterministic(self):
        a = rejection_sample(G1, threshold_posterior(ORACLE), 0, 500, seed=7).noise
        b = rejection_sample(G1, threshold_posterior(ORACLE), 0, 500, seed=7).noise
        assert a.tobytes() == b.tobytes()

    def test_zero_samples(self):
        assert rejection_sample(G1, threshold_posterior(ORACLE), 0, 0, seed=0).noise.shape == (0,)

    def test_2d_class_means(self):
        spec = default_spec()
        g = GaussianNoiseOracle(spec)
        post = mixture_posterior_2d(spec)
        for y in range(4):
            res = rejection_sample(g, post, y, 20_000, seed=y)
            x = g(res.noise)
            # Bayes conditional mean: nearby modes leak in, so compare with a quadrature oracle
            mean = _conditional_mean_2d(spec, y)
            np.testing.assert_allclose(x.mean(axis=0), mean, atol=4 * 1.2 / np.sqrt(20_000))
            assert abs(res.acceptance_rate - 0.25) < 0.01


def _conditional_mean_2d(spec, y):
    h = 0.05
    grid = np.arange(-9, 9 + h / 2, h)
    xx = np.stack(np.meshgrid(grid, grid), axis=-1).reshape(-1, 2)
    w = spec.pdf(xx) * spec.class_posterior(xx)[:, y]
    return (w[:, None] * xx).sum(axis=0) / w.sum()


class TestDemo:
    @pytest.mark.parametrize("hard", [True, False])
    def test_histogram_matches_conditional(self, hard):
        out = demo_1d(n=100_000, bins=50, y=0, seed=0, hard=hard)
        assert out["tv"] <= 0.02
        assert out["pvalue"] > 0.01
        assert out["counts"].sum() <= 100_000

    def test_hard_support(self):
        out = demo_1d(n=10_000, seed=3, hard=True)
        assert np.all(out["samples"] < 0)
