"""Closed-form failure landscapes for auxiliary-classifier and projection conditioning.

Three toy problems, each small enough to write down exactly:

* ``AcganLandscape``: a 1D Gaussian pair where the classifier term drags the
  generator scale v away from the true value 1 as the weight lambda grows.
* ``SeparableLandscape``: vertically uniform 2D data with a linear classifier of
  angle alpha; the loss is piecewise in (l, alpha) and has a spurious minimum.
* ``ProjganState``: the mean dynamics of a projection discriminator with hinge
  loss, which drift away from an already exact generator.

``gd_minimize`` runs projected gradient descent over any of the first two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.special import erfc

from .gradcore import UsageError

TWO_PI = 2.0 * math.pi
DEFAULT_D = math.sqrt(0.99 / 12.0)


class DomainError(ValueError):
    """An argument lies outside the domain of a closed-form expression."""


def q_function(t):
    """Standard normal upper tail Q(t) = P(N(0, 1) > t); accepts scalars or arrays."""
    arr = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError("q_function needs finite input")
    out = 0.5 * erfc(arr / math.sqrt(2.0))
    return float(out) if out.ndim == 0 else out


def _normal_pdf(t):
    return np.exp(-0.5 * np.square(t)) / math.sqrt(2.0 * math.pi)


# --------------------------------------------------------------------------
# Gaussian pair under an auxiliary classifier
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AcganLandscape:
    lam: float = 1.0
    v_bounds: tuple[float, float] = (1e-6, 10.0)

    def __post_init__(self):
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise DomainError("lambda must be a finite non-negative number")

    @property
    def bounds(self) -> np.ndarray:
        return np.array([self.v_bounds])

    periodic = None

    def objective(self, x) -> float:
        return acgan_loss(self, float(np.ravel(x)[0]))

    def gradient(self, x) -> np.ndarray:
        return np.array([acgan_grad(self, float(np.ravel(x)[0]))])


def _check_v(v):
    arr = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError("v must be a finite positive number")
    return arr


def acgan_loss(land: AcganLandscape, v):
    """|1 - v| + lambda (Q(1) + Q(1/v)), additive constant fixed to zero."""
    arr = _check_v(v)
    out = np.abs(1.0 - arr) + land.lam * (q_function(1.0) + q_function(1.0 / arr))
    return float(out) if out.ndim == 0 else out


def acgan_grad(land: AcganLandscape, v):
    """Derivative in v; at v = 1 the left slope -1 is used for the |1 - v| part."""
    arr = _check_v(v)
    slope = np.where(arr > 1.0, 1.0, -1.0)
    out = slope + land.lam * _normal_pdf(1.0 / arr) / np.square(arr)
    return float(out) if out.ndim == 0 else out


def acgan_grid_minimizer(land: AcganLandscape, step: float = 1e-3, v_max: float = 2.0) -> float:
    """argmin of the loss over the grid {step, 2 step, ..., v_max}; first index wins ties."""
    grid = step * np.arange(1, int(round(v_max / step)) + 1)
    return float(grid[int(np.argmin(acgan_loss(land, grid)))])


# --------------------------------------------------------------------------
# Vertically uniform separable data under a linear classifier
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SeparableLandscape:
    """Real class y sits on the line x1 = d y; fakes are parameterized by ``l``.

    For l >= 0 fakes share the real column with x2 ~ U[-l, l]; for l < 0 they sit
    on the wrong column -d y with half-width 0.9 - |l|. The classifier predicts
    sign(sin(alpha) x1 - cos(alpha) x2).
    """

    lam: float = 2.0
    d: float = DEFAULT_D

    def __post_init__(self):
        if not (self.d > 0 and math.isfinite(self.d)):
            raise DomainError("d must be positive")
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise DomainError("lambda must be a finite non-negative number")

    bounds = np.array([[-0.9, 1.0], [0.0, TWO_PI]])
    periodic = (False, True)

    @property
    def alpha0(self) -> float:
        return math.atan(1.0 / self.d)

    def alpha_plus(self, l: float) -> float:
        return math.atan(l / self.d)

    def alpha_minus(self, l: float) -> float:
        return math.atan((0.9 - abs(l)) / self.d)

    def bad_critical_point(self, l: float = -0.6) -> tuple[float, float]:
        """The spurious stationary point (l, pi + alpha_-(l)) for a negative l."""
        if not -0.9 < l < 0:
            raise DomainError("the spurious point needs l in (-0.9, 0)")
        return l, math.pi + self.alpha_minus(l)

    def objective(self, x) -> float:
        return separable_total(self, float(x[0]), float(x[1]))

    def gradient(self, x) -> np.ndarray:
        return separable_grad(self, float(x[0]), float(x[1]))


def _check_l(l: float) -> float:
    if not (math.isfinite(l) and -0.9 <= l <= 1.0):
        raise DomainError(f"l must lie in [-0.9, 1], got {l}")
    return float(l)


def _check_alpha(alpha: float) -> float:
    if not (math.isfinite(alpha) and 0.0 <= alpha < TWO_PI):
        raise DomainError(f"alpha must lie in [0, 2 pi), got {alpha}")
    return float(alpha)


def separable_ls(land: SeparableLandscape, l: float) -> float:
    """W2 between the real and fake conditional distributions, averaged over y."""
    l = _check_l(l)
    if l >= 0:
        return (1.0 - l) / math.sqrt(3.0)
    return math.sqrt(4.0 * land.d ** 2 + (0.1 - l) ** 2 / 3.0)


def _ls_dl(land: SeparableLandscape, l: float) -> float:
    if l >= 0:
        return -1.0 / math.sqrt(3.0)
    return -(0.1 - l) / (3.0 * separable_ls(land, l))


def _band_error(alpha: float, edge: float, scale: float, sign: float):
    """Error of a column at signed offset, given its band angle ``edge``.

    Returns (value, d/dalpha, d/dscale) for the four-piece table
    ``1/2 - sign*d tan(a)/(2 scale)`` near 0, ``0`` or ``1`` on the flats and the
    mirrored ramp near pi. ``sign=+1`` is the correct column, ``-1`` the wrong one.
    """
    # closed intervals on the ramps, open on the flats
    if alpha <= edge or alpha >= TWO_PI - edge:
        ramp = -sign
    elif alpha < math.pi - edge:
        return (0.0 if sign > 0 else 1.0), 0.0, 0.0
    elif alpha <= math.pi + edge:
        ramp = sign
    else:
        return (1.0 if sign > 0 else 0.0), 0.0, 0.0
    tan = math.tan(alpha)
    sec2 = 1.0 + tan * tan
    value = 0.5 + ramp * tan / (2.0 * scale)
    # divide twice rather than by scale**2, which underflows for tiny bands
    return value, ramp * sec2 / (2.0 * scale), -ramp * tan / (2.0 * scale) / scale


def _lc_parts(land: SeparableLandscape, l: float, alpha: float):
    d = land.d
    # the ramp terms are written as d tan(a) / (2 s) = tan(a) / (2 s / d)
    real_v, real_da, _ = _band_error(alpha, land.alpha0, 1.0 / d, +1.0)
    if l > 0:
        fake_v, fake_da, fake_ds = _band_error(alpha, land.alpha_plus(l), l / d, +1.0)
        fake_dl = fake_ds / d
    elif l == 0:
        # all fakes sit at (d y, 0); the ramps collapse onto alpha in {0, pi}
        s = math.sin(alpha)
        fake_v = 0.5 if alpha in (0.0, math.pi) else (0.0 if s > 0 else 1.0)
        fake_da = fake_dl = 0.0
    elif l == -0.9:
        # zero-width band on the wrong column: the mirror image of l == 0
        s = math.sin(alpha)
        fake_v = 0.5 if alpha in (0.0, math.pi) else (1.0 if s > 0 else 0.0)
        fake_da = fake_dl = 0.0
    else:
        s = 0.9 - abs(l)
        fake_v, fake_da, fake_ds = _band_error(alpha, land.alpha_minus(l), s / d, -1.0)
        fake_dl = fake_ds / d  # ds/dl = +1 for l < 0
    return real_v, fake_v, real_da + fake_da, fake_dl


def separable_lc(land: SeparableLandscape, l: float, alpha: float) -> float:
    """Classifier error on real data plus classifier error on fake data."""
    l, alpha = _check_l(l), _check_alpha(alpha)
    real_v, fake_v, _, _ = _lc_parts(land, l, alpha)
    return real_v + fake_v


def separable_total(land: SeparableLandscape, l: float, alpha: float) -> float:
    return separable_ls(land, l) + land.lam * separable_lc(land, l, alpha)


def separable_grad(land: SeparableLandscape, l: float, alpha: float) -> np.ndarray:
    """(dL/dl, dL/dalpha) on the branch selected by the closed-interval convention."""
    l, alpha = _check_l(l), _check_alpha(alpha)
    _, _, lc_da, lc_dl = _lc_parts(land, l, alpha)
    return np.array([_ls_dl(land, l) + land.lam * lc_dl, land.lam * lc_da])


def separable_lc_montecarlo(land: SeparableLandscape, l: float, alpha: float, n: int, seed) -> tuple[float, float]:
    """Sampling estimate of L_C and its standard error, independent of the tables."""
    rng = np.random.default_rng(seed)
    sa, ca = math.sin(alpha), math.cos(alpha)

    def error_rate(x1, x2, y):
        pred = np.sign(sa * x1 - ca * x2)
        return (pred != y).astype(np.float64)

    y = rng.choice([-1.0, 1.0], size=n)
    real = error_rate(land.d * y, rng.uniform(-1.0, 1.0, n), y)
    yf = rng.choice([-1.0, 1.0], size=n)
    if l >= 0:
        fake = error_rate(land.d * yf, rng.uniform(-l, l, n), yf)
    else:
        w = 0.9 - abs(l)
        fake = error_rate(-land.d * yf, rng.uniform(-w, w, n), yf)
    est = real.mean() + fake.mean()
    se = math.sqrt(real.var(ddof=1) / n + fake.var(ddof=1) / n)
    return float(est), se


# --------------------------------------------------------------------------
# Projected gradient descent
# --------------------------------------------------------------------------


@dataclass
class GdTrajectory:
    params: np.ndarray     # [steps + 1, dim], starting point included
    losses: np.ndarray     # [steps + 1]
    converged: bool
    final: np.ndarray
    aborted: bool = False
    message: str = ""


def _project(x: np.ndarray, bounds, periodic) -> np.ndarray:
    if bounds is None:
        return x
    out = x.copy()
    for i, (lo, hi) in enumerate(np.asarray(bounds, dtype=np.float64)):
        if periodic is not None and periodic[i]:
            out[i] = lo + np.mod(out[i] - lo, hi - lo)
        else:
            out[i] = min(max(out[i], lo), hi)
    return out


def finite_difference_grad(f: Callable, x: np.ndarray, h: float = 1e-6, bounds=None, periodic=None) -> np.ndarray:
    """Central differences at projected points, divided by the projected spacing."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        xp, xm = _project(x + e, bounds, periodic), _project(x - e, bounds, periodic)
        if periodic is not None and periodic[i]:
            span = 2.0 * h
        else:
            span = xp[i] - xm[i]
        g[i] = (f(xp) - f(xm)) / span
    return g


def gd_minimize(f, x0, lr: float, steps: int, *, grad: Callable | None = None,
                bounds=None, periodic=None, tol: float = 1e-10) -> GdTrajectory:
    """Projected gradient descent.

    ``f`` is either a callable or a landscape object exposing ``objective``,
    ``gradient``, ``bounds`` and ``periodic``. Without an analytic gradient,
    central differences with step 1e-6 are used. A non-finite loss stops the
    run and returns the partial trajectory with ``aborted=True``.
    """
    if not lr > 0:
        raise UsageError("lr must be positive")
    if steps < 1:
        raise UsageError("steps must be at least 1")
    if hasattr(f, "objective"):
        land = f
        f = land.objective
        grad = grad or land.gradient
        bounds = land.bounds if bounds is None else bounds
        periodic = land.periodic if periodic is None else periodic
    if grad is None:
        fn = f
        grad = lambda x: finite_difference_grad(fn, x, 1e-6, bounds, periodic)  # noqa: E731

    x = _project(np.atleast_1d(np.asarray(x0, dtype=np.float64)), bounds, periodic)
    params = [x.copy()]
    losses = [f(x)]
    moved = np.inf
    aborted, message = False, ""
    if not math.isfinite(losses[0]):
        return GdTrajectory(np.array(params), np.array(losses), False, x, True, "non-finite loss at x0")
    for t in range(steps):
        x_new = _project(x - lr * np.asarray(grad(x), dtype=np.float64), bounds, periodic)
        loss = f(x_new)
        if not math.isfinite(loss) or not np.all(np.isfinite(x_new)):
            aborted, message = True, f"non-finite loss at step {t + 1}"
            break
        moved = float(np.max(np.abs(x_new - x)))
        x = x_new
        params.append(x.copy())
        losses.append(loss)
    return GdTrajectory(np.array(params), np.array(losses), (not aborted) and moved <= tol, x, aborted, message)


# --------------------------------------------------------------------------
# Projection-discriminator mean dynamics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ProjganState:
    v0: np.ndarray
    v1: np.ndarray
    offset: np.ndarray = field(default_factory=lambda: np.zeros(2))
    step: float = 1e-3
    t: int = 0
    generator_first: bool = True

    def __post_init__(self):
        for name in ("v0", "v1", "offset"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64).copy())
        if not self.step >= 0:
            raise DomainError("step must be non-negative")


def projgan_step(state: ProjganState) -> ProjganState:
    """One alternating update of generator offset and class embeddings.

    The generator descends -(v0 + v1); each embedding then moves by half the step
    times the conditional mean gap, which equals -offset when the generator
    started exact.
    """
    a = state.step
    if state.generator_first:
        offset = state.offset + a * (state.v0 + state.v1)
        v0 = state.v0 - 0.5 * a * offset
        v1 = state.v1 - 0.5 * a * offset
    else:
        v0 = state.v0 - 0.5 * a * state.offset
        v1 = state.v1 - 0.5 * a * state.offset
        offset = state.offset + a * (v0 + v1)
    return replace(state, v0=v0, v1=v1, offset=offset, t=state.t + 1)


def projgan_rollout(state: ProjganState, steps: int) -> list[ProjganState]:
    out = [state]
    for _ in range(steps):
        state = projgan_step(state)
        out.append(state)
    return out
