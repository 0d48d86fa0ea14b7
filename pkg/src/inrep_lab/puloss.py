"""Positive-unlabeled discriminator objective and its equilibrium.

The generated pool is treated as unlabeled: a fraction ``pi`` of it already
belongs to the target class, so only the remainder is counted as fake. With
p_gen = pi p_data + (1 - pi) p_gf the population value is

    V = (1 + pi) E_data[log D] + E_gen[log(1 - D)] - pi E_data[log(1 - D)].
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .gradcore import Tensor, UsageError
from .landscape import DomainError

SCORE_EPS = 1e-7


@dataclass(frozen=True)
class PuConfig:
    pi: float = 0.0
    clip: bool = True
    saturating: bool = True

    def __post_init__(self):
        if not (0.0 <= self.pi <= 1.0):
            raise DomainError(f"pi must lie in [0, 1], got {self.pi}")


@dataclass(frozen=True)
class DiscreteDist:
    atoms: tuple
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "atoms", tuple(self.atoms))
        if probs.ndim != 1 or len(probs) != len(self.atoms):
            raise UsageError("one probability per atom is required")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise UsageError("probabilities must be non-negative and sum to one")

    @classmethod
    def on_indices(cls, probs) -> "DiscreteDist":
        probs = np.asarray(probs, dtype=np.float64)
        return cls(tuple(range(len(probs))), probs)


def _check_scores(d) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if np.any(~np.isfinite(d)) or np.any(d <= 0.0) or np.any(d >= 1.0):
        raise DomainError("scores must lie strictly inside (0, 1)")
    return d


def pu_value_population(p_data: DiscreteDist, p_gen: DiscreteDist, d, cfg: PuConfig) -> float:
    """Exact expectation of the PU value over shared atoms."""
    if p_data.atoms != p_gen.atoms:
        raise UsageError("distributions must share their atoms")
    d = _check_scores(d)
    pi = cfg.pi
    log_d, log_1md = np.log(d), np.log1p(-d)
    return float((1 + pi) * p_data.probs @ log_d + p_gen.probs @ log_1md - pi * p_data.probs @ log_1md)


def pu_value_population_batch(data_probs: np.ndarray, gen_probs: np.ndarray, d: np.ndarray, pi: float) -> np.ndarray:
    """Row-wise population value for stacked candidates, shape [n, atoms] each."""
    log_d, log_1md = np.log(d), np.log1p(-d)
    return ((1 + pi) * data_probs * log_d + gen_probs * log_1md - pi * data_probs * log_1md).sum(axis=-1)


def pu_value_empirical(real_scores, fake_scores, cfg: PuConfig) -> float:
    """Clipped (or plain) sample estimate of the PU value."""
    real = np.asarray(real_scores, dtype=np.float64).ravel()
    fake = np.asarray(fake_scores, dtype=np.float64).ravel()
    if real.size == 0 or fake.size == 0:
        raise UsageError("real and fake score lists must be non-empty")
    real, fake = _check_scores(real), _check_scores(fake)
    pos = (1 + cfg.pi) * np.mean(np.log(real))
    residual = np.mean(np.log1p(-fake)) - cfg.pi * np.mean(np.log1p(-real))
    return float(pos + (min(0.0, residual) if cfg.clip else residual))


def pu_value_tensor(real_scores: Tensor, fake_scores: Tensor, pi: float, clip: bool = True) -> tuple[Tensor, bool]:
    """Recorded version for training; scores are clamped away from {0, 1}.

    Returns the value and whether the clip gate was active (residual > 0).
    """
    lo, hi = SCORE_EPS, 1.0 - SCORE_EPS
    r = real_scores.clip(lo, hi)
    f = fake_scores.clip(lo, hi)
    pos = (1 + pi) * r.log().mean()
    residual = (1.0 - f).log().mean() - pi * (1.0 - r).log().mean()
    gated = bool(residual.values.item() > 0.0)
    if clip:
        residual = residual.minimum(0.0)
    return pos + residual, gated


def real_sample_loss(d, pi: float):
    """Per-sample loss on a real point, -(1 + pi) log D + pi log(1 - D)."""
    d = _check_scores(d)
    return -(1 + pi) * np.log(d) + pi * np.log1p(-d)


def optimal_discriminator(p_data_at_x, p_gf_at_x, pi: float):
    """(1 + pi) p_data / ((1 + pi) p_data + (1 - pi) p_gf)."""
    pd = np.asarray(p_data_at_x, dtype=np.float64)
    pg = np.asarray(p_gf_at_x, dtype=np.float64)
    if np.any(pd < 0) or np.any(pg < 0):
        raise DomainError("densities must be non-negative")
    num = (1 + pi) * pd
    den = num + (1 - pi) * pg
    if np.any(den == 0):
        raise DomainError("both densities vanish")
    out = num / den
    return float(out) if out.ndim == 0 else out


def _xlogx_over2(a: float) -> float:
    return 0.0 if a == 0 else a * math.log(a / 2.0)


def equilibrium_value(pi: float) -> float:
    """Value at p_gen = p_data with the optimal discriminator; 0 log 0 = 0."""
    if not 0.0 <= pi <= 1.0:
        raise DomainError("pi must lie in [0, 1]")
    return _xlogx_over2(1 + pi) + _xlogx_over2(1 - pi)


def _simplex_grid(atoms: int, steps: int) -> np.ndarray:
    """Every composition of ``steps`` into ``atoms`` parts, in lexicographic order."""
    rows = []
    for head in itertools.product(range(steps + 1), repeat=atoms - 1):
        rest = steps - sum(head)
        if rest >= 0:
            rows.append(head + (rest,))
    return np.array(rows, dtype=np.float64) / steps


def bruteforce_equilibrium(p_data: DiscreteDist, pi: float, grid_step: float) -> tuple[DiscreteDist, float]:
    """Scan fake distributions on a simplex grid and return the generator's best response.

    Each candidate p_gf is scored by the PU value at its optimal discriminator;
    the generator minimizes that value. Optimal scores are clamped to
    [1e-12, 1 - 1e-12] so empty atoms stay finite. Ties go to the
    lexicographically smallest grid point.
    """
    k = len(p_data.probs)
    if k > 4:
        raise UsageError("brute force supports at most 4 atoms")
    if not 0.0 <= pi < 1.0:
        raise DomainError("pi must lie in [0, 1) for the scan")
    steps = int(round(1.0 / grid_step))
    if steps < 1 or abs(steps * grid_step - 1.0) > 1e-9:
        raise UsageError("grid_step must divide 1")
    grid = _simplex_grid(k, steps)
    pd = np.broadcast_to(p_data.probs, grid.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        d_opt = np.where((1 + pi) * pd + (1 - pi) * grid > 0,
                         (1 + pi) * pd / ((1 + pi) * pd + (1 - pi) * grid), 0.5)
    d_opt = np.clip(d_opt, 1e-12, 1 - 1e-12)
    gen = pi * pd + (1 - pi) * grid
    values = pu_value_population_batch(pd, gen, d_opt, pi)
    best = int(np.argmin(values))  # argmin returns the first (lexicographic) index
    return DiscreteDist(p_data.atoms, grid[best]), float(values[best])
