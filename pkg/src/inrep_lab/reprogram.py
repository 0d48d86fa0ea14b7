"""Noise reweighting: turning a perfect unconditional sampler into a conditional one.

Given a generator G with noise density p_z and a class posterior p(y | x), the
reweighted noise density p_z(z) p(y | G(z)) / p(y) pushes forward through G to
p(x | y). Since p(y | x) <= 1 it can be sampled exactly by rejection: propose
z ~ p_z and accept with probability p(y | G(z)).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, stats

from .gradcore import UsageError
from .landscape import DomainError
from .mixture import GaussianMixtureSpec
from .oracle import MixtureTransport, TwoModeOracle1D


@dataclass(frozen=True)
class Posterior:
    """p(y | x) for all classes as a function returning [n, K], plus the priors p(y)."""

    fn: Callable[[np.ndarray], np.ndarray]
    prior: np.ndarray

    def __call__(self, x) -> np.ndarray:
        out = np.atleast_2d(np.asarray(self.fn(x), dtype=np.float64))
        if np.any(np.abs(out.sum(axis=1) - 1.0) > 1e-9):
            raise DomainError("posterior rows must sum to one")
        return out

    @property
    def num_classes(self) -> int:
        return len(self.prior)


def constant_posterior(prior) -> Posterior:
    prior = np.asarray(prior, dtype=np.float64)
    return Posterior(lambda x: np.tile(prior, (len(np.atleast_1d(x)), 1)), prior)


def threshold_posterior(oracle: TwoModeOracle1D, cut: float = 0.0) -> Posterior:
    """Hard labels: class 0 left of ``cut``, class 1 right of it."""
    p0 = float(oracle.cdf(cut))

    def fn(x):
        left = (np.ravel(x) < cut).astype(np.float64)
        return np.stack([left, 1.0 - left], axis=1)

    return Posterior(fn, np.array([p0, 1.0 - p0]))


def component_posterior_1d(oracle: TwoModeOracle1D) -> Posterior:
    """Soft labels: the class is the mixture component that produced x."""

    def fn(x):
        x = np.ravel(x)
        dens = oracle.weights * np.exp(-0.5 * ((x[:, None] - oracle.means) / oracle.sds) ** 2) / oracle.sds
        return dens / dens.sum(axis=1, keepdims=True)

    return Posterior(fn, oracle.weights.copy())


def mixture_posterior_2d(spec: GaussianMixtureSpec) -> Posterior:
    return Posterior(spec.class_posterior, spec.class_prior())


class UniformNoiseOracle:
    """1D oracle generator G(z) = F^{-1}(z) with z ~ Uniform(0, 1)."""

    def __init__(self, oracle: TwoModeOracle1D):
        self.oracle = oracle

    def noise_pdf(self, z) -> np.ndarray:
        return self.oracle.noise_pdf(np.ravel(z))

    def sample_noise(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.oracle.sample_noise(n, rng)

    def __call__(self, z) -> np.ndarray:
        return self.oracle.apply(np.ravel(z))


class GaussianNoiseOracle:
    """2D oracle generator driven by standard normal noise."""

    def __init__(self, spec: GaussianMixtureSpec, latent_dim: int = 2):
        self.transport = MixtureTransport(spec, latent_dim)
        self.latent_dim = latent_dim

    def noise_pdf(self, z) -> np.ndarray:
        z = np.atleast_2d(z)
        return np.exp(-0.5 * np.sum(z * z, axis=1)) / (2 * np.pi) ** (self.latent_dim / 2)

    def sample_noise(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.latent_dim))

    def __call__(self, z) -> np.ndarray:
        return self.transport.apply(np.atleast_2d(z))


def _check_class(post: Posterior, y: int) -> float:
    if not 0 <= y < post.num_classes:
        raise UsageError(f"class {y} outside [0, {post.num_classes})")
    return float(post.prior[y])


def reweighted_density(g, post: Posterior, y: int, z) -> np.ndarray:
    """p_z(z) p(y | G(z)) / p(y) at each noise point."""
    py = _check_class(post, y)
    if py <= 0:
        raise DomainError(f"class {y} has zero prior")
    return g.noise_pdf(z) * post(g(z))[:, y] / py


@dataclass
class RejectionResult:
    noise: np.ndarray
    proposals: int
    accepted: int

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposals if self.proposals else float("nan")


def rejection_sample(g, post: Posterior, y: int, n: int, seed, batch: int = 65536,
                     max_proposals: int | None = None) -> RejectionResult:
    """Exact draws from the reweighted noise density.

    Proposals come from p_z and are kept with probability p(y | G(z)); the
    envelope constant is 1 / p(y). Proposals are drawn in fixed-size batches,
    so the output depends only on ``seed`` and ``n``.
    """
    py = _check_class(post, y)
    if py < 1e-6:
        raise UsageError(f"p(y={y}) = {py:.2e} is too small for rejection sampling")
    if n < 0:
        raise UsageError("n must be non-negative")
    rng = np.random.default_rng(seed)
    limit = max_proposals or int(50 * n / py) + batch
    kept, proposals, accepted = [], 0, 0
    while accepted < n:
        if proposals >= limit:
            raise RuntimeError("rejection sampler exceeded its proposal budget")
        z = g.sample_noise(batch, rng)
        keep = rng.random(batch) < post(g(z))[:, y]
        kept.append(z[keep])
        proposals += batch
        accepted += int(keep.sum())
    if not kept:
        return RejectionResult(g.sample_noise(0, rng), 0, 0)
    noise = np.concatenate(kept)[:n]
    return RejectionResult(noise, proposals, accepted)


def bin_probabilities(pdf: Callable[[float], float], edges: np.ndarray, breakpoints=()) -> np.ndarray:
    """Probability mass of each histogram bin by adaptive quadrature."""
    out = np.empty(len(edges) - 1)
    for i, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        pts = [p for p in breakpoints if a < p < b] or None
        out[i] = integrate.quad(lambda t: float(pdf(t)), a, b, points=pts, limit=200)[0]
    return out


def histogram_tv(samples: np.ndarray, probs: np.ndarray, edges: np.ndarray) -> float:
    """Total variation between the binned sample and reference bin masses.

    Mass outside the edges on either side counts toward the distance.
    """
    counts, _ = np.histogram(samples, bins=edges)
    emp = counts / len(samples)
    outside = 1.0 - emp.sum()
    return 0.5 * (np.abs(emp - probs).sum() + abs(outside - (1.0 - probs.sum())))


def chi_square_pvalue(samples: np.ndarray, probs: np.ndarray, edges: np.ndarray, min_expected: float = 5.0) -> float:
    """Goodness-of-fit p-value, pooling sparse bins until each expects >= min_expected."""
    counts, _ = np.histogram(samples, bins=edges)
    n = len(samples)
    obs = list(counts) + [n - counts.sum()]
    exp = list(probs * n) + [n * (1.0 - probs.sum())]
    pooled_o, pooled_e, acc_o, acc_e = [], [], 0.0, 0.0
    for o, e in zip(obs, exp):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            pooled_o.append(acc_o)
            pooled_e.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 and pooled_e:
        pooled_o[-1] += acc_o
        pooled_e[-1] += acc_e
    pooled_e = np.array(pooled_e) * (sum(pooled_o) / sum(pooled_e))
    return float(stats.chisquare(pooled_o, pooled_e).pvalue)


def conditional_pdf_1d(oracle: TwoModeOracle1D, post: Posterior, y: int) -> Callable[[float], float]:
    """Bayes conditional p(x) p(y | x) / p(y) for the 1D oracle."""
    py = _check_class(post, y)
    return lambda x: float(oracle.pdf(np.array([x]))[0] * post(np.array([x]))[0, y] / py)


def demo_1d(n: int = 100_000, bins: int = 50, y: int = 0, seed=0, hard: bool = True) -> dict:
    """Run the 1D construction and compare the pushforward with p(x | y)."""
    oracle = TwoModeOracle1D()
    g = UniformNoiseOracle(oracle)
    post = threshold_posterior(oracle) if hard else component_posterior_1d(oracle)
    res = rejection_sample(g, post, y, n, seed)
    x = g(res.noise)
    edges = np.linspace(-6.0, 6.0, bins + 1)
    probs = bin_probabilities(conditional_pdf_1d(oracle, post, y), edges, breakpoints=(0.0,))
    counts, _ = np.histogram(x, bins=edges)
    return {
        "edges": edges, "counts": counts, "expected": probs * n, "samples": x,
        "tv": histogram_tv(x, probs, edges), "pvalue": chi_square_pvalue(x, probs, edges),
        "acceptance_rate": res.acceptance_rate, "prior": float(post.prior[y]),
        "proposals": res.proposals, "accepted": res.accepted,
    }
