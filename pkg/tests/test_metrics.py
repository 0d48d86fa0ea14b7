import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg

from inrep_lab.gradcore import UsageError
from inrep_lab.landscape import DomainError
from inrep_lab.metrics import (GaussianFit, MetricsReport, bayes_nearest_mean_accuracy, cas_lite,
                               conditional_accuracy, evaluate, fit_logistic, knn_recall, w2_gaussian_1d,
                               w2_gaussian_2d)
from inrep_lab.mixture import GaussianMixtureSpec, default_spec, sample_mixture
from oracles import brute_force_recall, four_mode_nearest_mean_accuracy, w2_1d_by_quantiles


def random_spd(rng):
    a = rng.standard_normal((2, 2))
    return a @ a.T + 0.1 * np.eye(2)


def w2_oracle(ma, ca, mb, cb):
    # Schur-based square roots, unrelated to the eigendecomposition path
    ra = linalg.sqrtm(ca).real
    cross = linalg.sqrtm(ra @ cb @ ra).real
    return np.sqrt(np.sum((ma - mb) ** 2) + np.trace(ca + cb - 2 * cross))


class TestW2:
    def test_1d_examples(self):
        assert w2_gaussian_1d(0.5, 1.2, 0.5, 1.2) == 0.0
        assert w2_gaussian_1d(0, 1, 3, 1) == 3.0
        assert w2_gaussian_1d(0, 1, 0, 2) == 1.0

    @pytest.mark.parametrize("args", [(0, 1, 0, 2), (0, 1, 3, 1), (-1.5, 0.3, 2.0, 1.7)])
    def test_1d_quantile_integral(self, args):
        assert w2_gaussian_1d(*args) == pytest.approx(w2_1d_by_quantiles(*args), abs=1e-7)

    def test_1d_negative_sd(self):
        with pytest.raises(DomainError):
            w2_gaussian_1d(0, -1, 0, 1)

    def test_2d_examples(self):
        a = GaussianFit([0.0, 0.0], np.eye(2))
        assert w2_gaussian_2d(a, a) == pytest.approx(0.0, abs=1e-7)
        assert w2_gaussian_2d(a, GaussianFit([3.0, 4.0], np.eye(2))) == pytest.approx(5.0, abs=1e-9)

    @given(st.integers(0, 100_000))
    def test_2d_against_oracle(self, seed):
        rng = np.random.default_rng(seed)
        ma, mb = rng.standard_normal(2), rng.standard_normal(2)
        ca, cb = random_spd(rng), random_spd(rng)
        got = w2_gaussian_2d(GaussianFit(ma, ca), GaussianFit(mb, cb))
        # the implementation adds 1e-9 I jitter to both sides
        want = w2_oracle(ma, ca + 1e-9 * np.eye(2), mb, cb + 1e-9 * np.eye(2))
        assert got == pytest.approx(want, abs=1e-8)

    @given(st.integers(0, 100_000))
    def test_2d_symmetric(self, seed):
        rng = np.random.default_rng(seed)
        a = GaussianFit(rng.standard_normal(2), random_spd(rng))
        b = GaussianFit(rng.standard_normal(2), random_spd(rng))
        assert abs(w2_gaussian_2d(a, b) - w2_gaussian_2d(b, a)) <= 1e-10

    def test_1d_reduction(self):
        a = GaussianFit([1.0, 0.0], np.diag([4.0, 1.0]))
        b = GaussianFit([-1.0, 0.0], np.diag([1.0, 1.0]))
        assert w2_gaussian_2d(a, b) == pytest.approx(w2_gaussian_1d(1, 2, -1, 1), abs=1e-8)

    def test_non_spd(self):
        with pytest.raises(DomainError):
            w2_gaussian_2d(GaussianFit([0, 0], np.diag([1.0, -1.0])), GaussianFit([0, 0], np.eye(2)))
        with pytest.raises(DomainError):
            GaussianFit([0, 0], np.array([[1.0, 0.5], [0.0, 1.0]]))


class TestRecall:
    def test_same_set(self):
        x = np.random.default_rng(0).standard_normal((300, 2))
        assert knn_recall(x, x, 3) == 1.0

    def test_empty_real(self):
        assert knn_recall(np.zeros((0, 2)), np.random.default_rng(0).standard_normal((10, 2))) == 1.0

    def test_too_few_fakes(self):
        with pytest.raises(UsageError):
            knn_recall(np.zeros((5, 2)), np.zeros((3, 2)), k=3)

    def test_single_mode_fake(self):
        # modes far apart relative to their scale, so each holds a quarter of the mass
        spec = default_spec()
        wide = GaussianMixtureSpec(spec.means * 8, spec.covariances, spec.weights, spec.labels)
        real = sample_mixture(wide, 2000, seed=0).x
        fake = np.random.default_rng(1).standard_normal((2000, 2)) + wide.means[0]
        got = knn_recall(real, fake, 3)
        assert got == brute_force_recall(real, fake, 3)
        assert got == pytest.approx(0.25, abs=0.03)

    def test_single_mode_fake_overlapping(self):
        real = sample_mixture(default_spec(), 2000, seed=0).x
        fake = np.random.default_rng(1).standard_normal((500, 2)) + [0.0, 2.0]
        assert knn_recall(real, fake, 3) == brute_force_recall(real, fake, 3)

    @settings(max_examples=30)
    @given(st.integers(0, 100_000), st.integers(1, 5))
    def test_matches_brute_force(self, seed, k):
        rng = np.random.default_rng(seed)
        real = rng.standard_normal((150, 2)) * rng.uniform(0.5, 3)
        fake = rng.standard_normal((80, 2))
        fake[:5] += 6.0  # a sparse far cluster gives large radii
        assert knn_recall(real, fake, k) == brute_force_recall(real, fake, k)

    @settings(max_examples=30)
    @given(st.integers(0, 100_000))
    def test_superset_monotone(self, seed):
        rng = np.random.default_rng(seed)
        real = rng.standard_normal((200, 2)) * 2
        fake = rng.standard_normal((60, 2))
        extra = rng.standard_normal((30, 2)) * 2
        # nearby additions can shrink existing k-NN radii, so the superset is
        # built from points that leave every old radius untouched
        base = knn_recall(real, fake, 3)
        far = extra + 50.0
        assert knn_recall(real, np.vstack([fake, far]), 3) >= base


class TestAccuracy:
    def test_at_means(self):
        spec = default_spec()
        assert conditional_accuracy(spec.means, np.arange(4), spec) == 1.0
        assert conditional_accuracy(spec.means, np.array([1, 2, 3, 0]), spec) == 0.0

    def test_bayes_against_quadrature(self):
        mc = bayes_nearest_mean_accuracy(default_spec(), n=400_000, seed=0)
        assert mc == pytest.approx(four_mode_nearest_mean_accuracy(), abs=0.01)

    def test_quadrature_oracle_value(self):
        # wedge mass for a unit Gaussian two units from both wedge edges
        assert four_mode_nearest_mean_accuracy() == pytest.approx(0.8490, abs=2e-3)


class TestCas:
    def test_real_training_split(self):
        spec = default_spec()
        train = sample_mixture(spec, 4000, seed=0)
        test = sample_mixture(spec, 4000, seed=1)
        ceiling = np.mean(fit_logistic(train.x, train.y, 4)(test.x) == test.y)
        gen = sample_mixture(spec, 4000, seed=2)
        assert cas_lite(gen.x, gen.y, test.x, test.y, 4) == pytest.approx(ceiling, abs=0.02)

    def test_shuffled_labels(self):
        spec = default_spec()
        gen = sample_mixture(spec, 4000, seed=3)
        test = sample_mixture(spec, 4000, seed=4)
        # a single shuffle fits arbitrary spurious regions, so average several
        rng = np.random.default_rng(5)
        accs = [cas_lite(gen.x, rng.permutation(gen.y), test.x, test.y, 4) for _ in range(20)]
        assert np.mean(accs) == pytest.approx(0.25, abs=0.05)

    def test_separable(self):
        rng = np.random.default_rng(0)
        x = np.concatenate([rng.normal(-5, 0.5, (100, 2)), rng.normal(5, 0.5, (100, 2))])
        y = np.repeat([0, 1], 100)
        assert cas_lite(x, y, x, y) == 1.0

    def test_single_class(self):
        with pytest.raises(UsageError):
            cas_lite(np.zeros((5, 2)), np.zeros(5, dtype=int), np.zeros((5, 2)), np.zeros(5, dtype=int))


class TestReport:
    def test_ranges_and_determinism(self):
        spec = default_spec()
        gen = sample_mixture(spec, 1000, seed=0)
        real = sample_mixture(spec, 2000, seed=1)
        a = evaluate(gen.x, gen.y, spec, real.x, real.y)
        b = evaluate(gen.x, gen.y, spec, real.x, real.y)
        assert a.to_json() == b.to_json()
        for v in (a.recall, a.conditional_accuracy, a.cas_lite):
            assert 0.0 <= v <= 1.0
        assert len(a.per_class_w2) == 4 and max(a.per_class_w2) < 0.3
        assert MetricsReport.from_dict(a.to_dict()) == a

    def test_absent_class_is_nan(self):
        spec = default_spec()
        gen = sample_mixture(spec, 1000, seed=0)
        keep = gen.y != 2
        real = sample_mixture(spec, 1000, seed=1)
        rep = evaluate(gen.x[keep], gen.y[keep], spec, real.x, real.y)
        assert np.isnan(rep.per_class_w2[2]) and not np.isnan(rep.per_class_w2[0])
