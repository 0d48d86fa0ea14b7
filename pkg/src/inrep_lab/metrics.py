"""Low-dimensional analogues of the usual GAN evaluation metrics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .gradcore import UsageError
from .landscape import DomainError
from .mixture import GaussianMixtureSpec

JITTER = 1e-9


@dataclass(frozen=True)
class GaussianFit:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        if cov.shape != (len(mean), len(mean)):
            raise UsageError("covariance shape does not match mean")
        if not np.allclose(cov, cov.T, atol=1e-9):
            raise DomainError("covariance must be symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", 0.5 * (cov + cov.T))

    @classmethod
    def from_samples(cls, x: np.ndarray) -> "GaussianFit":
        x = np.asarray(x, dtype=np.float64)
        if len(x) < 2:
            raise UsageError("need at least two samples to fit a Gaussian")
        return cls(x.mean(axis=0), np.cov(x, rowvar=False, bias=False))


def w2_gaussian_1d(m1: float, s1: float, m2: float, s2: float) -> float:
    if s1 < 0 or s2 < 0:
        raise DomainError("standard deviations must be non-negative")
    return math.hypot(m1 - m2, s1 - s2)


def _sqrtm_psd(a: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
    if vals.min() < -1e-8 * max(1.0, vals.max()):
        raise DomainError("matrix is not positive semi-definite")
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def w2_gaussian_2d(a: GaussianFit, b: GaussianFit) -> float:
    """Closed-form W2 (Frechet distance) between two Gaussians."""
    eye = np.eye(len(a.mean))
    ca, cb = a.covariance + JITTER * eye, b.covariance + JITTER * eye
    for c in (ca, cb):
        if np.linalg.eigvalsh(c).min() <= 0:
            raise DomainError("covariance is not positive definite after jitter")
    ra = _sqrtm_psd(ca)
    cross = _sqrtm_psd(ra @ cb @ ra)
    sq = float(np.sum((a.mean - b.mean) ** 2) + np.trace(ca + cb - 2.0 * cross))
    return math.sqrt(max(sq, 0.0))


def knn_recall(real: np.ndarray, fake: np.ndarray, k: int = 3) -> float:
    """Share of real points inside some fake point's k-NN ball (radius from the fake set)."""
    fake = np.asarray(fake, dtype=np.float64)
    if fake.ndim != 2 or len(fake) <= k:
        raise UsageError(f"need more than k={k} fake samples")
    real = np.asarray(real, dtype=np.float64).reshape(-1, fake.shape[1])
    if len(real) == 0:
        return 1.0
    tree = cKDTree(fake)
    # k + 1 because the nearest neighbour of a fake point within the fake set is itself
    radii = tree.query(fake, k=k + 1)[0][:, -1]
    m = min(len(fake), 32)
    dist, idx = tree.query(real, k=m)
    dist, idx = dist.reshape(len(real), m), idx.reshape(len(real), m)
    covered = np.any(dist <= radii[idx], axis=1)
    # only fakes within the largest radius can cover a point; finish the rows
    # whose m nearest candidates did not reach that far
    open_rows = np.flatnonzero(~covered & (dist[:, -1] <= radii.max()))
    for i, nbrs in zip(open_rows, tree.query_ball_point(real[open_rows], radii.max())):
        covered[i] = bool(np.any(np.linalg.norm(fake[nbrs] - real[i], axis=1) <= radii[nbrs]))
    return float(covered.mean())


def nearest_mean_labels(x: np.ndarray, spec: GaussianMixtureSpec) -> np.ndarray:
    """Label of the component mean closest to each point (first index wins ties)."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, 2)
    d2 = ((x[:, None, :] - spec.means[None, :, :]) ** 2).sum(axis=2)
    return spec.labels[np.argmin(d2, axis=1)]


def conditional_accuracy(x: np.ndarray, y: np.ndarray, spec: GaussianMixtureSpec) -> float:
    y = np.asarray(y)
    if len(y) == 0:
        return float("nan")
    return float(np.mean(nearest_mean_labels(x, spec) == y))


def bayes_nearest_mean_accuracy(spec: GaussianMixtureSpec, n: int = 400_000, seed=0) -> float:
    """Accuracy a perfect conditional sampler attains under the nearest-mean rule."""
    from .mixture import sample_mixture

    data = sample_mixture(spec, n, seed)
    return conditional_accuracy(data.x, data.y, spec)


@dataclass(frozen=True)
class LogisticRecipe:
    steps: int = 500
    lr: float = 0.5
    l2: float = 1e-4


def fit_logistic(x: np.ndarray, y: np.ndarray, num_classes: int, recipe: LogisticRecipe = LogisticRecipe()):
    """Multinomial logistic regression by full-batch gradient descent on standardized inputs."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    mu, sd = x.mean(axis=0), x.std(axis=0) + 1e-12
    xs = (x - mu) / sd
    w = np.zeros((x.shape[1], num_classes))
    b = np.zeros(num_classes)
    onehot = np.eye(num_classes)[y]
    for _ in range(recipe.steps):
        logits = xs @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / len(x)
        w -= recipe.lr * (xs.T @ g + recipe.l2 * w)
        b -= recipe.lr * g.sum(axis=0)

    def predict(q: np.ndarray) -> np.ndarray:
        return np.argmax(((np.asarray(q) - mu) / sd) @ w + b, axis=1)

    return predict


def cas_lite(gen_x: np.ndarray, gen_y: np.ndarray, test_x: np.ndarray, test_y: np.ndarray,
             num_classes: int | None = None, recipe: LogisticRecipe = LogisticRecipe()) -> float:
    """Real-test accuracy of a classifier fitted only on generated labeled samples."""
    gen_y = np.asarray(gen_y, dtype=np.int64)
    if len(np.unique(gen_y)) < 2:
        raise UsageError("generated set must contain at least two classes")
    k = num_classes or int(max(gen_y.max(), np.max(test_y)) + 1)
    predict = fit_logistic(gen_x, gen_y, k, recipe)
    return float(np.mean(predict(test_x) == np.asarray(test_y)))


@dataclass
class MetricsReport:
    overall_w2: float
    per_class_w2: list[float]
    recall: float
    conditional_accuracy: float
    cas_lite: float
    per_class_accuracy: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)


def evaluate(gen_x: np.ndarray, gen_y: np.ndarray, spec: GaussianMixtureSpec,
             real_x: np.ndarray, real_y: np.ndarray, k: int = 3) -> MetricsReport:
    """All metrics for one labeled generated set against a held-out real set."""
    per_w2, per_acc = [], []
    for c in range(spec.num_classes):
        sel = gen_y == c
        if sel.sum() < 2:
            per_w2.append(float("nan"))
            per_acc.append(float("nan"))
            continue
        mean, cov = spec.class_moments(c)
        per_w2.append(w2_gaussian_2d(GaussianFit.from_samples(gen_x[sel]), GaussianFit(mean, cov)))
        per_acc.append(conditional_accuracy(gen_x[sel], gen_y[sel], spec))
    overall = w2_gaussian_2d(GaussianFit.from_samples(gen_x), GaussianFit.from_samples(real_x))
    try:
        cas = cas_lite(gen_x, gen_y, real_x, real_y, spec.num_classes)
    except UsageError:
        cas = float("nan")
    return MetricsReport(
        overall_w2=overall,
        per_class_w2=per_w2,
        recall=knn_recall(real_x, gen_x, k),
        conditional_accuracy=conditional_accuracy(gen_x, gen_y, spec),
        cas_lite=cas,
        per_class_accuracy=per_acc,
    )
