"""Exact samplers with closed-form pushforwards, used in place of a trained UGAN.

``MixtureTransport`` maps standard normal noise onto a 2D Gaussian mixture with
the Knothe-Rosenblatt (triangular) transport: the first latent coordinate fixes
x1 through the marginal quantile function, the second fixes x2 through the
conditional quantile given x1. The map is smooth, so gradients flow back to
its input, and its pushforward is the mixture exactly. Remaining latent
coordinates are ignored.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr, ndtri

from .gradcore import Tensor, UsageError, custom_op
from .mixture import GaussianMixtureSpec

_SQRT2PI = np.sqrt(2.0 * np.pi)


def _phi(t):
    return np.exp(-0.5 * t * t) / _SQRT2PI


def _mixture_quantile(z: np.ndarray, w: np.ndarray, m: np.ndarray, s: np.ndarray,
                      tol: float = 1e-12, max_iter: int = 100, grid: int = 16) -> np.ndarray:
    """Solve sum_k w_k Phi((x - m_k)/s_k) = Phi(z) row-wise.

    ``w, m, s`` have shape [n, K]. Residuals switch to survival form for z > 0
    so both tails keep full relative precision. A coarse per-row grid brackets
    the root before safeguarded Newton refines it.
    """
    z = np.asarray(z, dtype=np.float64)
    cand = m + s * z[:, None]
    lo = cand.min(axis=1)
    hi = cand.max(axis=1)
    upper = z > 0
    target = np.where(upper, ndtr(-z), ndtr(z))

    def residual(x):
        # x has shape [n] or [n, G]; the component axis is last after expansion
        t = (x[..., None] - m[:, None, :] if x.ndim == 2 else x[:, None] - m) / (s[:, None, :] if x.ndim == 2 else s)
        ww = w[:, None, :] if x.ndim == 2 else w
        up = upper[:, None] if x.ndim == 2 else upper
        tg = target[:, None] if x.ndim == 2 else target
        tail = (ww * ndtr(np.where(up[..., None], -t, t))).sum(axis=-1)
        f = np.where(up, tg - tail, tail - tg)
        return f, t

    if len(z) and grid > 2:
        frac = np.linspace(0.0, 1.0, grid)
        xs = lo[:, None] + (hi - lo)[:, None] * frac
        fg, _ = residual(xs)
        # last grid point with a negative residual; f is increasing in x
        j = np.clip((fg < 0).sum(axis=1) - 1, 0, grid - 2)
        rows = np.arange(len(z))
        a, b = xs[rows, j], xs[rows, j + 1]
        fa, fb = fg[rows, j], fg[rows, j + 1]
        lo = np.where(fa < 0, a, lo)
        hi = np.where(fb >= 0, b, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            x = np.where(fb > fa, a - fa * (b - a) / (fb - fa), 0.5 * (a + b))
        x = np.clip(x, lo, hi)
    else:
        x = 0.5 * (lo + hi)
    done = hi - lo <= tol
    for _ in range(max_iter):
        f, t = residual(x)
        dens = (w * _phi(t) / s).sum(axis=1)
        lo = np.where(f < 0, x, lo)
        hi = np.where(f >= 0, x, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(dens > 0, f / dens, np.inf)
        newton = x - step
        ok = np.isfinite(newton) & (newton >= lo) & (newton <= hi)
        x_new = np.where(ok, newton, 0.5 * (lo + hi))
        x_new = np.where(done, x, x_new)
        conv = (np.abs(x_new - x) <= tol * (1.0 + np.abs(x))) | (f == 0) | (hi - lo <= tol)
        x = x_new
        done = done | conv
        if done.all():
            break
    return x


class MixtureTransport:
    """Smooth exact sampler N(0, I_d) -> 2D Gaussian mixture."""

    def __init__(self, spec: GaussianMixtureSpec, latent_dim: int = 2):
        if latent_dim < 2:
            raise UsageError("the transport reads two latent coordinates")
        self.spec = spec
        self.latent_dim = latent_dim
        c = spec.covariances
        self._mu = spec.means
        self._var1 = c[:, 0, 0]
        self._sd1 = np.sqrt(self._var1)
        self._slope = c[:, 1, 0] / self._var1
        self._sd2 = np.sqrt(c[:, 1, 1] - c[:, 1, 0] ** 2 / self._var1)
        self._logw = np.log(np.maximum(spec.weights, 1e-300))

    def sample_latent(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.latent_dim))

    def _conditional(self, x1: np.ndarray):
        # responsibilities of each component for the first coordinate
        t = (x1[:, None] - self._mu[:, 0]) / self._sd1
        logr = self._logw - 0.5 * t * t - np.log(self._sd1)
        logr -= logr.max(axis=1, keepdims=True)
        r = np.exp(logr)
        r /= r.sum(axis=1, keepdims=True)
        m2 = self._mu[:, 1] + self._slope * (x1[:, None] - self._mu[:, 0])
        return r, m2, t

    def apply(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] < 2:
            raise UsageError(f"latent batch must be [n, >=2], got {z.shape}")
        n, k = len(z), self.spec.num_components
        w = np.broadcast_to(self.spec.weights, (n, k))
        x1 = _mixture_quantile(z[:, 0], w, np.broadcast_to(self._mu[:, 0], (n, k)),
                               np.broadcast_to(self._sd1, (n, k)))
        r, m2, _ = self._conditional(x1)
        x2 = _mixture_quantile(z[:, 1], r, m2, np.broadcast_to(self._sd2, (n, k)))
        return np.stack([x1, x2], axis=1)

    __call__ = apply

    def jacobian_parts(self, z: np.ndarray, x: np.ndarray):
        """Entries of the lower-triangular Jacobian d(x1, x2)/d(z0, z1)."""
        x1, x2 = x[:, 0], x[:, 1]
        t1 = (x1[:, None] - self._mu[:, 0]) / self._sd1
        p1 = (self.spec.weights * _phi(t1) / self._sd1).sum(axis=1)
        dx1_dz0 = _phi(z[:, 0]) / p1
        r, m2, _ = self._conditional(x1)
        t2 = (x2[:, None] - m2) / self._sd2
        p21 = (r * _phi(t2) / self._sd2).sum(axis=1)
        dlog = -(x1[:, None] - self._mu[:, 0]) / self._var1
        dr = r * (dlog - (r * dlog).sum(axis=1, keepdims=True))
        dG_dx1 = (dr * ndtr(t2)).sum(axis=1) - (r * _phi(t2) * self._slope / self._sd2).sum(axis=1)
        dx2_dz1 = _phi(z[:, 1]) / p21
        dx2_dx1 = -dG_dx1 / p21
        return dx1_dz0, dx2_dx1, dx2_dz1

    def vjp(self, z: np.ndarray, x: np.ndarray, gx: np.ndarray) -> np.ndarray:
        a, b, c = self.jacobian_parts(z, x)
        gz = np.zeros_like(z)
        gz[:, 0] = (gx[:, 0] + gx[:, 1] * b) * a
        gz[:, 1] = gx[:, 1] * c
        return gz

    def forward(self, z: Tensor) -> Tensor:
        """Recording version; the map has no parameters, only an input gradient."""
        return custom_op(z, self.apply, self.vjp)

    def parameters(self) -> list[np.ndarray]:
        return [self.spec.means, self.spec.covariances, self.spec.weights]


class TwoModeOracle1D:
    """Inverse-CDF sampler from Uniform(0, 1) noise to a 1D two-Gaussian mixture."""

    def __init__(self, means=(-2.0, 2.0), sds=(1.0, 1.0), weights=(0.5, 0.5)):
        self.means = np.asarray(means, dtype=np.float64)
        self.sds = np.asarray(sds, dtype=np.float64)
        self.weights = np.asarray(weights, dtype=np.float64)
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise UsageError("weights must sum to one")

    def noise_pdf(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        return ((z > 0) & (z < 1)).astype(np.float64)

    def sample_noise(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(0.0, 1.0, size=n)

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return (self.weights * _phi((x[..., None] - self.means) / self.sds) / self.sds).sum(axis=-1)

    def cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return (self.weights * ndtr((x[..., None] - self.means) / self.sds)).sum(axis=-1)

    def apply(self, z) -> np.ndarray:
        z = np.clip(np.asarray(z, dtype=np.float64), 1e-300, 1 - 1e-16)
        flat = z.ravel()
        n = flat.size
        k = len(self.weights)
        x = _mixture_quantile(ndtri(flat), np.broadcast_to(self.weights, (n, k)),
                              np.broadcast_to(self.means, (n, k)), np.broadcast_to(self.sds, (n, k)))
        return x.reshape(z.shape)

    __call__ = apply
