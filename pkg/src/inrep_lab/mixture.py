"""The ground-truth 2D Gaussian mixture and labeled samples drawn from it."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gradcore import UsageError


@dataclass(frozen=True, eq=False)
class GaussianMixtureSpec:
    means: np.ndarray          # [K, 2]
    covariances: np.ndarray    # [K, 2, 2]
    weights: np.ndarray        # [K]
    labels: np.ndarray         # [K] class id per component

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        covs = np.asarray(self.covariances, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covs)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "labels", labels)
        k = len(means)
        if means.shape != (k, 2) or covs.shape != (k, 2, 2) or weights.shape != (k,) or labels.shape != (k,):
            raise UsageError("mixture spec arrays have inconsistent shapes")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise UsageError("mixture weights must be a probability vector")
        if np.any(labels < 0):
            raise UsageError("labels must be non-negative class ids")
        for c in covs:
            if not np.allclose(c, c.T, atol=1e-12) or np.any(np.linalg.eigvalsh(c) <= 0):
                raise UsageError("covariances must be symmetric positive-definite")

    def __eq__(self, other) -> bool:
        if not isinstance(other, GaussianMixtureSpec):
            return NotImplemented
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("means", "covariances", "weights", "labels"))

    __hash__ = None

    @property
    def num_components(self) -> int:
        return len(self.weights)

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1

    def class_prior(self) -> np.ndarray:
        return np.bincount(self.labels, weights=self.weights, minlength=self.num_classes)

    def component_logpdf(self, x: np.ndarray) -> np.ndarray:
        """log w_k N(x; mu_k, S_k) for every point and component, shape [n, K]."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = np.empty((len(x), self.num_components))
        for k, (m, c, w) in enumerate(zip(self.means, self.covariances, self.weights)):
            diff = x - m
            sol = np.linalg.solve(c, diff.T).T
            out[:, k] = (np.log(w) if w > 0 else -np.inf) - 0.5 * np.sum(diff * sol, axis=1) \
                - 0.5 * np.log(np.linalg.det(c)) - np.log(2 * np.pi)
        return out

    def pdf(self, x: np.ndarray) -> np.ndarray:
        return np.exp(np.logaddexp.reduce(self.component_logpdf(x), axis=1))

    def class_posterior(self, x: np.ndarray) -> np.ndarray:
        """p(y | x) for every class, shape [n, num_classes]."""
        lp = self.component_logpdf(x)
        lp -= lp.max(axis=1, keepdims=True)
        w = np.exp(lp)
        post = np.zeros((len(w), self.num_classes))
        for k, y in enumerate(self.labels):
            post[:, y] += w[:, k]
        return post / post.sum(axis=1, keepdims=True)

    def class_moments(self, y: int) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance of p(x | y) (a sub-mixture when several components share y)."""
        idx = np.flatnonzero(self.labels == y)
        if idx.size == 0:
            raise UsageError(f"class {y} has no component")
        w = self.weights[idx] / self.weights[idx].sum()
        mean = w @ self.means[idx]
        cov = np.zeros((2, 2))
        for wi, m, c in zip(w, self.means[idx], self.covariances[idx]):
            d = (m - mean)[:, None]
            cov += wi * (c + d @ d.T)
        return mean, cov

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "covariances": self.covariances.tolist(),
                "weights": self.weights.tolist(), "labels": self.labels.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianMixtureSpec":
        return cls(np.array(d["means"]), np.array(d["covariances"]), np.array(d["weights"]), np.array(d["labels"]))


def default_spec() -> GaussianMixtureSpec:
    """Four unit-variance modes at (0, 2), (-2, 0), (0, -2), (2, 0), one class each."""
    means = np.array([[0.0, 2.0], [-2.0, 0.0], [0.0, -2.0], [2.0, 0.0]])
    return GaussianMixtureSpec(means, np.stack([np.eye(2)] * 4), np.full(4, 0.25), np.arange(4))


@dataclass
class LabeledDataset:
    x: np.ndarray                 # [n, 2]
    y: np.ndarray                 # [n] possibly corrupted labels
    component: np.ndarray         # [n] mixture component that produced the point
    flipped: np.ndarray = field(default=None)  # [n] True where the label was corrupted

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64).reshape(-1, 2)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.component = np.asarray(self.component, dtype=np.int64)
        if self.flipped is None:
            self.flipped = np.zeros(len(self.y), dtype=bool)
        if not (len(self.x) == len(self.y) == len(self.component) == len(self.flipped)):
            raise UsageError("dataset columns differ in length")
        if np.any(self.y < 0):
            raise UsageError("labels must be non-negative")

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.x[idx], self.y[idx], self.component[idx], self.flipped[idx])

    def class_counts(self, num_classes: int) -> np.ndarray:
        return np.bincount(self.y, minlength=num_classes)


def sample_mixture(spec: GaussianMixtureSpec, n: int, seed) -> LabeledDataset:
    """Draw ``n`` i.i.d. labeled points; deterministic for a given seed."""
    if n < 0:
        raise UsageError("n must be non-negative")
    rng = np.random.default_rng(seed)
    comp = rng.choice(spec.num_components, size=n, p=spec.weights)
    eps = rng.standard_normal((n, 2))
    chol = np.linalg.cholesky(spec.covariances)
    x = spec.means[comp] + np.einsum("nij,nj->ni", chol[comp], eps)
    return LabeledDataset(x, spec.labels[comp], comp)
