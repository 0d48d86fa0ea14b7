"""Independent reference computations shared by the unit and acceptance tests.

Nothing here calls into the package code it is used to check.
"""

import math

import numpy as np
from scipy import integrate


def jacobi_singular_values(a: np.ndarray, sweeps: int = 60) -> np.ndarray:
    """Singular values by one-sided Jacobi rotations (no LAPACK SVD)."""
    u = np.array(a, dtype=np.float64, copy=True)
    if u.shape[1] > u.shape[0]:
        u = u.T.copy()  # same singular values, no forced zero columns
    n = u.shape[1]
    for _ in range(sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = float(u[:, p] @ u[:, p])
                beta = float(u[:, q] @ u[:, q])
                gamma = float(u[:, p] @ u[:, q])
                if gamma == 0.0 or abs(gamma) <= 1e-15 * math.sqrt(alpha * beta):
                    continue
                off = max(off, abs(gamma) / math.sqrt(alpha * beta))
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.hypot(1.0, zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                up, uq = u[:, p].copy(), u[:, q].copy()
                u[:, p] = c * up - s * uq
                u[:, q] = s * up + c * uq
        if off < 1e-15:
            break
    return np.sort(np.linalg.norm(u, axis=0))[::-1]


def finite_difference_check(loss_fn, params, analytic, rng, coords: int = 20, h: float = 1e-5) -> float:
    """Norm-wise relative error between analytic gradients and central differences.

    ``loss_fn()`` re-evaluates the loss from the current parameter values;
    ``coords`` random coordinates across all parameters are probed.
    """
    sizes = [p.values.size for p in params]
    picks = rng.choice(sum(sizes), size=min(coords, sum(sizes)), replace=False)
    a, f = [], []
    offsets = np.cumsum([0] + sizes)
    for flat in picks:
        i = int(np.searchsorted(offsets, flat, side="right") - 1)
        j = flat - offsets[i]
        p = params[i]
        old = p.values.flat[j]
        p.values.flat[j] = old + h
        up = loss_fn()
        p.values.flat[j] = old - h
        down = loss_fn()
        p.values.flat[j] = old
        f.append((up - down) / (2 * h))
        a.append(analytic[i].flat[j])
    a, f = np.array(a), np.array(f)
    return float(np.linalg.norm(a - f) / max(np.linalg.norm(f), 1e-12))


def brute_force_recall(real: np.ndarray, fake: np.ndarray, k: int) -> float:
    """Direct O(n m) evaluation of the k-NN recall definition."""
    dff = np.linalg.norm(fake[:, None, :] - fake[None, :, :], axis=2)
    radii = np.sort(dff, axis=1)[:, k]  # index 0 is the point itself
    drf = np.linalg.norm(real[:, None, :] - fake[None, :, :], axis=2)
    return float(np.mean(np.any(drf <= radii[None, :], axis=1)))


def four_mode_nearest_mean_accuracy() -> float:
    """P(x lands in its own nearest-mean wedge) for unit Gaussians at (0, +-2), (+-2, 0).

    By symmetry every class has the accuracy of the mode at (0, 2), whose
    wedge is x2 > |x1|. Integrated numerically over the plane.
    """
    def density(x2, x1):
        return math.exp(-0.5 * (x1 * x1 + (x2 - 2.0) ** 2)) / (2 * math.pi)

    val, _ = integrate.dblquad(density, -12.0, 12.0, lambda x1: abs(x1), lambda x1: 14.0, epsabs=1e-11)
    return val


def w2_1d_by_quantiles(m1, s1, m2, s2) -> float:
    """W2 between 1D normals from the quantile-function integral."""
    from scipy.stats import norm

    val, _ = integrate.quad(lambda u: (m1 + s1 * norm.ppf(u) - m2 - s2 * norm.ppf(u)) ** 2, 0.0, 1.0, limit=200)
    return math.sqrt(val)
