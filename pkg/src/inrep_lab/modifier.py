"""Conditional modifier: label embedding followed by invertible residual blocks.

Each block is x -> x + F(x) where every weight of the residual subnet F is kept
at spectral norm <= cap < 1. With 1-Lipschitz activations F is then a
contraction and the block can be inverted by fixed-point iteration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gradcore import Mlp, Tensor, UsageError, as_tensor, concat


class InversionError(RuntimeError):
    """Fixed-point inversion did not converge; carries the last residual norm."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class LabelEmbedding:
    def __init__(self, num_classes: int, d_y: int, rng: np.random.Generator | None = None):
        if num_classes < 1 or d_y < 1:
            raise UsageError("embedding needs at least one class and one dimension")
        rng = np.random.default_rng(0) if rng is None else rng
        self.num_classes = num_classes
        self.d_y = d_y
        self.table = Tensor(rng.standard_normal((num_classes, d_y)), True, "embedding")

    def _check(self, y) -> np.ndarray:
        y = np.asarray(y)
        if y.size and (not np.issubdtype(y.dtype, np.integer) or y.min() < 0 or y.max() >= self.num_classes):
            raise UsageError(f"class ids must be integers in [0, {self.num_classes})")
        return y.astype(np.int64)

    def lookup(self, y) -> Tensor:
        """Recorded rows for a batch of class ids."""
        return self.table[self._check(y)]

    def rows(self, y) -> np.ndarray:
        return self.table.values[self._check(y)]


def embed(emb: LabelEmbedding, y: int) -> np.ndarray:
    if not isinstance(y, (int, np.integer)):
        raise UsageError("class id must be an integer")
    return emb.rows(np.array([y]))[0].copy()


class InvertibleBlock:
    def __init__(self, dim: int, hidden: int, cap: float | None = 0.9,
                 activation: str = "tanh", rng: np.random.Generator | None = None):
        if cap is not None and not 0.0 < cap < 1.0:
            raise UsageError("lipschitz cap must lie in (0, 1)")
        if activation not in ("tanh", "relu"):
            raise UsageError("residual activation must be 1-Lipschitz (tanh or relu)")
        self.dim = dim
        self.cap = cap
        self.net = Mlp([dim, hidden, dim], activation=activation, rng=rng)
        self.normalize()

    @property
    def params(self) -> list[Tensor]:
        return self.net.params

    def normalize(self) -> None:
        """Rescale every weight whose spectral norm exceeds the cap back onto it.

        The norm comes from an exact SVD. Warm-started power iteration is a
        lower bound only and can miss an overshoot when the leading singular
        direction changes between steps.
        """
        if self.cap is None:
            return
        for w in self.net.weights:
            sigma = float(np.linalg.norm(w.values, 2))
            if sigma > self.cap:
                w.values = w.values * (self.cap / sigma)

    def spectral_norms(self) -> list[float]:
        return [float(np.linalg.norm(w.values, 2)) for w in self.net.weights]

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self.net.apply(x)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.net.forward(x)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return x + self.net.apply(x)

    def invert(self, y: np.ndarray, tol: float = 1e-10, max_iters: int = 200, history: list | None = None) -> np.ndarray:
        """Solve x + F(x) = y row-wise by x <- y - F(x)."""
        y = np.asarray(y, dtype=np.float64)
        x = y.copy()
        step = np.inf
        for _ in range(max_iters):
            x_new = y - self.net.apply(x)
            step = float(np.max(np.linalg.norm(x_new - x, axis=-1))) if x.size else 0.0
            if history is not None:
                history.append(step)
            x = x_new
            if step <= tol:
                return x
        raise InversionError(f"fixed-point inversion stalled at step size {step:.3e}", step)


@dataclass(frozen=True)
class ModifierConfig:
    num_classes: int = 4
    d_u: int = 8
    d_y: int = 4
    blocks: int = 3
    hidden: int = 32
    cap: float | None = 0.9
    activation: str = "tanh"

    @property
    def d_z(self) -> int:
        return self.d_u + self.d_y


class ModifierNet:
    """z = concat(u, E(y)) pushed through the block stack."""

    def __init__(self, cfg: ModifierConfig = ModifierConfig(), seed=0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.embedding = LabelEmbedding(cfg.num_classes, cfg.d_y, rng)
        self.blocks = [InvertibleBlock(cfg.d_z, cfg.hidden, cfg.cap, cfg.activation, rng)
                       for _ in range(cfg.blocks)]

    @property
    def d_u(self) -> int:
        return self.cfg.d_u

    @property
    def d_z(self) -> int:
        return self.cfg.d_z

    @property
    def block_params(self) -> list[Tensor]:
        return [p for b in self.blocks for p in b.params]

    @property
    def params(self) -> list[Tensor]:
        return [self.embedding.table] + self.block_params

    def _check_u(self, u) -> None:
        shape = u.shape if isinstance(u, Tensor) else np.shape(u)
        if len(shape) != 2 or shape[1] != self.d_u:
            raise UsageError(f"noise must have shape [n, {self.d_u}], got {tuple(shape)}")

    def latent(self, u, y) -> Tensor:
        """Recorded concat(u, E(y)) before the blocks."""
        self._check_u(u)
        y = np.broadcast_to(np.asarray(y), (np.shape(u)[0],))
        return concat([as_tensor(u), self.embedding.lookup(y)], axis=1)

    def forward(self, u, y) -> Tensor:
        z = self.latent(u, y)
        for b in self.blocks:
            z = b.forward(z)
        return z

    __call__ = forward

    def apply(self, u, y) -> np.ndarray:
        self._check_u(u)
        y = np.broadcast_to(np.asarray(y), (np.shape(u)[0],))
        z = np.concatenate([np.asarray(u, dtype=np.float64), self.embedding.rows(y)], axis=1)
        return self.transform(z)

    def transform(self, z: np.ndarray) -> np.ndarray:
        """Block stack only, applied to an already concatenated latent."""
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.d_z:
            raise UsageError(f"latent must have shape [n, {self.d_z}]")
        for b in self.blocks:
            z = b.apply(z)
        return z

    def invert(self, z_y: np.ndarray, tol: float = 1e-10, max_iters: int = 200) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z_y, dtype=np.float64))
        if z.shape[1] != self.d_z:
            raise UsageError(f"latent must have width {self.d_z}")
        for b in reversed(self.blocks):
            z = b.invert(z, tol, max_iters)
        return z

    def normalize(self) -> None:
        for b in self.blocks:
            b.normalize()

    def max_spectral_norm(self) -> float:
        return max(s for b in self.blocks for s in b.spectral_norms())

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {"embedding": self.embedding.table.values.copy()}
        for i, b in enumerate(self.blocks):
            out.update(b.net.state_dict(f"block{i}."))
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.embedding.table.values = np.array(state["embedding"], dtype=np.float64)
        for i, b in enumerate(self.blocks):
            b.net.load_state_dict(state, f"block{i}.")


def modifier_forward(m: ModifierNet, u, y: int) -> np.ndarray:
    """Single-sample convenience wrapper; ``u`` is a vector of length d_u."""
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 1:
        raise UsageError("modifier_forward takes one noise vector")
    return m.apply(u[None, :], np.array([y]))[0]


def modifier_invert(m: ModifierNet, z_y, tol: float = 1e-10, max_iters: int = 200) -> np.ndarray:
    z_y = np.asarray(z_y, dtype=np.float64)
    out = m.invert(z_y, tol, max_iters)
    return out[0] if z_y.ndim == 1 else out
