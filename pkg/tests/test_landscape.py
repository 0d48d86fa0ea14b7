import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy import integrate

from inrep_lab.gradcore import UsageError
from inrep_lab.landscape import (DEFAULT_D, AcganLandscape, DomainError, ProjganState, SeparableLandscape,
                                 acgan_grad, acgan_grid_minimizer, acgan_loss, finite_difference_grad,
                                 gd_minimize, projgan_rollout, projgan_step, q_function, separable_grad,
                                 separable_lc, separable_lc_montecarlo, separable_ls, separable_total)


def q_quad(t):
    """Normal tail by adaptive quadrature, independent of erfc."""
    return integrate.quad(lambda s: math.exp(-0.5 * s * s) / math.sqrt(2 * math.pi), t, np.inf,
                          epsabs=1e-14, epsrel=1e-13)[0]


class TestQFunction:
    def test_zero(self):
        assert q_function(0.0) == 0.5

    def test_one_matches_quadrature(self):
        assert q_function(1.0) == pytest.approx(q_quad(1.0), rel=1e-10)
        assert q_function(1.0) == pytest.approx(0.158655, abs=1e-6)

    def test_far_tail(self):
        assert q_function(40.0) < 1e-300

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(DomainError):
            q_function(bad)

    @given(st.floats(-30, 30))
    def test_symmetry(self, t):
        assert abs(q_function(t) + q_function(-t) - 1.0) <= 1e-12

    def test_strictly_decreasing(self):
        # below about -5 the value rounds to 1 in double precision
        t = np.linspace(-5, 30, 3501)
        assert np.all(np.diff(q_function(t)) < 0)


class TestAcgan:
    def test_zero_lambda_at_one(self):
        assert acgan_loss(AcganLandscape(0.0), 1.0) == 0.0

    def test_lambda_two_at_one(self):
        assert acgan_loss(AcganLandscape(2.0), 1.0) == pytest.approx(4 * q_quad(1.0), rel=1e-10)
        # the quoted 0.634620 is truncated; 4 Q(1) = 0.6346210...
        assert acgan_loss(AcganLandscape(2.0), 1.0) == pytest.approx(0.634620, abs=2e-6)

    @pytest.mark.parametrize("v", [0.0, -1.0])
    def test_nonpositive_v(self, v):
        with pytest.raises(DomainError):
            acgan_loss(AcganLandscape(1.0), v)
        with pytest.raises(DomainError):
            acgan_grad(AcganLandscape(1.0), v)

    def test_negative_lambda(self):
        with pytest.raises(DomainError):
            AcganLandscape(-1.0)

    def test_slopes_without_regularizer(self):
        land = AcganLandscape(0.0)
        assert acgan_grad(land, 0.5) == -1.0
        assert acgan_grad(land, 1.5) == 1.0
        assert acgan_grad(land, 1.0) == -1.0  # left value at the kink

    def test_grad_matches_central_difference(self):
        land, h = AcganLandscape(5.0), 1e-6
        fd = (acgan_loss(land, 0.8 + h) - acgan_loss(land, 0.8 - h)) / (2 * h)
        assert acgan_grad(land, 0.8) == pytest.approx(fd, rel=1e-6)

    @given(st.floats(0, 100), st.floats(0.05, 3.0).filter(lambda v: abs(v - 1) > 1e-3))
    def test_grad_property(self, lam, v):
        land, h = AcganLandscape(lam), 1e-6
        fd = (acgan_loss(land, v + h) - acgan_loss(land, v - h)) / (2 * h)
        assert acgan_grad(land, v) == pytest.approx(fd, rel=1e-5, abs=1e-8)

    def test_grid_minimizer_non_increasing(self):
        vs = [acgan_grid_minimizer(AcganLandscape(lam)) for lam in (0, 1, 2, 5, 10, 50, 1000)]
        assert vs[0] == pytest.approx(1.0, abs=2e-3)
        assert all(b <= a for a, b in zip(vs, vs[1:]))

    def test_grid_minimizer_matches_brute_force(self):
        land = AcganLandscape(10.0)
        grid = np.arange(1, 2001) * 1e-3
        best = grid[np.argmin([acgan_loss(land, v) for v in grid])]
        assert acgan_grid_minimizer(land) == pytest.approx(best)


class TestSeparable:
    land = SeparableLandscape()

    def test_default_offset(self):
        assert self.land.d == DEFAULT_D == math.sqrt(0.99 / 12)

    def test_ls_values(self):
        assert separable_ls(self.land, 1.0) == 0.0
        assert separable_ls(self.land, 0.0) == pytest.approx(1 / math.sqrt(3), abs=1e-15)
        assert separable_ls(self.land, -0.9) == pytest.approx(math.sqrt(0.33 + 1 / 3), abs=1e-12)
        assert separable_ls(self.land, -0.9) == pytest.approx(0.814453, abs=1e-6)

    def test_ls_continuous_at_zero(self):
        assert abs(separable_ls(self.land, -1e-15) - separable_ls(self.land, 0.0)) <= 1e-12

    @pytest.mark.parametrize("l, a", [(1.5, 0.0), (-1.0, 0.0), (0.0, 2 * math.pi), (0.0, -0.1)])
    def test_out_of_range(self, l, a):
        with pytest.raises(DomainError):
            separable_total(self.land, l, a)

    def test_lc_optimum(self):
        assert separable_lc(self.land, 1.0, math.pi / 2) == 0.0

    def test_lc_at_alpha_zero(self):
        assert separable_lc(self.land, 0.5, 0.0) == 1.0
        est, se = separable_lc_montecarlo(self.land, 0.5, 1e-9, 100_000, 3)
        assert abs(est - 1.0) <= 4 * se

    def test_lc_bad_point_matches_montecarlo(self):
        l, a = self.land.bad_critical_point()
        assert a == pytest.approx(math.pi + math.atan(0.3 / self.land.d))
        est, _ = separable_lc_montecarlo(self.land, l, a, 100_000, 11)
        assert separable_lc(self.land, l, a) == pytest.approx(est, abs=0.01)

    @given(st.floats(-0.9, 1.0), st.floats(0.0, 2 * math.pi, exclude_max=True), st.integers(0, 2**31))
    def test_lc_matches_montecarlo(self, l, a, seed):
        # zero-width fake bands put every fake on the decision line when sin(alpha) ~ 0;
        # subnormal alphas underflow sin(alpha) * x1 to an exact tie as well
        assume(not (l in (0.0, -0.9) and abs(math.sin(a)) < 1e-9))
        est, se = separable_lc_montecarlo(self.land, l, a, 20_000, seed)
        assert abs(separable_lc(self.land, l, a) - est) <= 4.5 * max(se, 1e-3)

    def test_total_optimum_any_lambda(self):
        for lam in (0.0, 0.5, 2.0, 100.0):
            assert separable_total(SeparableLandscape(lam), 1.0, math.pi / 2) == 0.0

    @given(st.floats(-0.9, 1.0), st.floats(0.0, 2 * math.pi, exclude_max=True))
    def test_total_without_regularizer(self, l, a):
        assert separable_total(SeparableLandscape(0.0), l, a) == separable_ls(self.land, l)

    def test_bad_point_value(self):
        l, a = self.land.bad_critical_point()
        assert separable_total(self.land, l, a) == pytest.approx(2.002377, abs=1e-6)

    def test_bad_point_coordinatewise_minimum(self):
        l, a = self.land.bad_critical_point()
        base = separable_total(self.land, l, a)
        for h in (1e-3, 1e-2, 5e-2):
            for dl, da in ((h, 0), (-h, 0), (0, h), (0, -h)):
                assert separable_total(self.land, l + dl, a + da) >= base

    @given(st.floats(-0.85, 0.95), st.floats(0.05, 2 * math.pi - 0.05))
    def test_gradient_matches_finite_difference(self, l, a):
        land = self.land
        kinks = [land.alpha0, math.pi - land.alpha0, math.pi + land.alpha0, 2 * math.pi - land.alpha0]
        if l > 0:
            e = land.alpha_plus(l)
        else:
            e = land.alpha_minus(l)
        kinks += [e, math.pi - e, math.pi + e, 2 * math.pi - e]
        if min(abs(a - k) for k in kinks) < 1e-3 or abs(l) < 1e-3:
            return
        fd = finite_difference_grad(land.objective, np.array([l, a]))
        np.testing.assert_allclose(separable_grad(land, l, a), fd, rtol=1e-5, atol=1e-6)


class TestGradientDescent:
    def test_acgan_no_regularizer_reaches_one(self):
        run = gd_minimize(AcganLandscape(0.0), np.array([0.5]), lr=0.01, steps=2000)
        assert run.final[0] == pytest.approx(1.0, abs=0.01)
        assert len(run.params) == len(run.losses) == 2001

    def test_acgan_strong_regularizer_matches_grid(self):
        land = AcganLandscape(50.0)
        run = gd_minimize(land, np.array([0.5]), lr=0.01, steps=5000)
        assert run.final[0] == pytest.approx(acgan_grid_minimizer(land), abs=2e-3)

    def test_finite_difference_fallback(self):
        land = AcganLandscape(5.0)
        a = gd_minimize(land, np.array([0.7]), lr=0.01, steps=200)
        b = gd_minimize(land.objective, np.array([0.7]), lr=0.01, steps=200, bounds=land.bounds)
        np.testing.assert_allclose(a.params, b.params, atol=1e-6)

    def test_separable_from_near_optimum(self):
        run = gd_minimize(SeparableLandscape(), np.array([0.9, math.pi / 2]), lr=1e-3, steps=10_000)
        assert run.final[0] >= 0.99

    def test_generator_only_descent_stays_at_bad_point(self):
        land = SeparableLandscape()
        l, a = land.bad_critical_point()
        run = gd_minimize(lambda x: land.objective([x[0], a]), np.array([l]), lr=1e-3, steps=10_000,
                          grad=lambda x: land.gradient([x[0], a])[:1], bounds=land.bounds[:1])
        assert abs(run.final[0] - l) < 0.02

    def test_alpha_wraps(self):
        run = gd_minimize(lambda x: float(-x[1]), np.array([0.0, 2 * math.pi - 1e-4]), lr=1e-3, steps=1,
                          grad=lambda x: np.array([0.0, -1.0]), bounds=SeparableLandscape.bounds,
                          periodic=(False, True))
        assert 0.0 <= run.final[1] < 1e-3

    def test_abort_on_non_finite(self):
        with np.errstate(invalid="ignore"):
            run = gd_minimize(lambda x: float(np.log(x[0])), np.array([0.5]), lr=1.0, steps=10,
                              grad=lambda x: np.array([1.0]))
        assert run.aborted and "non-finite" in run.message
        assert len(run.params) == len(run.losses)

    @pytest.mark.parametrize("lr, steps", [(0.0, 10), (0.1, 0)])
    def test_bad_arguments(self, lr, steps):
        with pytest.raises(UsageError):
            gd_minimize(AcganLandscape(0.0), np.array([0.5]), lr=lr, steps=steps)


def rollout_oracle(v0, v1, alpha, steps):
    """Plain loop over the same recursion, written out scalar by scalar."""
    a0, a1 = list(v0), list(v1)
    off = [0.0, 0.0]
    for _ in range(steps):
        off = [off[i] + alpha * (a0[i] + a1[i]) for i in range(2)]
        a0 = [a0[i] - 0.5 * alpha * off[i] for i in range(2)]
        a1 = [a1[i] - 0.5 * alpha * off[i] for i in range(2)]
    return np.array(off)


class TestProjgan:
    def test_fixed_point(self):
        s = projgan_step(ProjganState([1.0, 0.0], [-1.0, 0.0], step=0.1))
        assert np.all(s.offset == 0.0)
        assert np.all(s.v0 == [1.0, 0.0]) and np.all(s.v1 == [-1.0, 0.0])

    def test_first_step(self):
        s = projgan_step(ProjganState([1.0, 0.0], [0.0, 1.0], step=0.1))
        np.testing.assert_allclose(s.offset, [0.1, 0.1], atol=1e-15)
        assert s.t == 1

    def test_ten_step_drift(self):
        alpha = 1e-3
        final = projgan_rollout(ProjganState([1.0, 0.0], [0.0, 1.0], step=alpha), 10)[-1]
        np.testing.assert_allclose(final.offset, rollout_oracle([1, 0], [0, 1], alpha, 10), rtol=1e-12)
        linear = 10 * alpha * np.array([1.0, 1.0])
        assert np.linalg.norm(final.offset - linear) / np.linalg.norm(linear) <= 0.01

    @given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.floats(1e-4, 1.0))
    def test_cancelling_embeddings_never_move(self, v, alpha):
        v0 = np.array(v)
        final = projgan_rollout(ProjganState(v0, -v0, step=alpha), 200)[-1]
        assert np.all(final.offset == 0.0)

    @given(st.lists(st.floats(-2, 2), min_size=4, max_size=4).filter(lambda v: abs(v[0] + v[2]) + abs(v[1] + v[3]) > 1e-2),
           st.floats(1e-5, 1e-3), st.integers(1, 1000))
    def test_nonzero_sum_drifts(self, v, alpha, steps):
        final = projgan_rollout(ProjganState(v[:2], v[2:], step=alpha), steps)[-1]
        assert np.linalg.norm(final.offset) > 0

    def test_embedding_first_order_differs(self):
        a = projgan_step(ProjganState([1.0, 0.0], [0.0, 1.0], offset=[0.5, 0.0], step=0.1))
        b = projgan_step(ProjganState([1.0, 0.0], [0.0, 1.0], offset=[0.5, 0.0], step=0.1, generator_first=False))
        assert not np.allclose(a.offset, b.offset)

    def test_negative_step_rejected(self):
        with pytest.raises(DomainError):
            ProjganState([1.0, 0.0], [0.0, 1.0], step=-1.0)
