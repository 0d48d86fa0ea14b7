"""Reverse-mode autodiff on dense float64 arrays, plus MLPs, Adam and spectral norms.

The graph is recorded implicitly: every op on a :class:`Tensor` returns a new
tensor holding its parents and a closure that pushes the output gradient back.
``backward`` topologically sorts the graph reachable from a scalar loss.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

CHECKPOINT_VERSION = 1


class UsageError(ValueError):
    """Raised for shape mismatches and misuse of the autodiff API."""


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # sum out the axes numpy broadcasting added or stretched
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A float64 array that remembers how it was computed."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, values, requires_grad: bool = False, name: str = ""):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def recorded(self) -> bool:
        return self._backward is not None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.values)

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        return float(self.values)

    # -- graph construction -------------------------------------------------
    @staticmethod
    def _make(values: np.ndarray, parents: tuple["Tensor", ...], backward) -> "Tensor":
        out = Tensor(values)
        live = tuple(p for p in parents if p.requires_grad)
        if live:
            out.requires_grad = True
            out._parents = live
            out._backward = backward
        return out

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    # -- elementwise arithmetic ----------------------------------------------
    def __add__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            a._accum(_unbroadcast(g, a.shape))
            b._accum(_unbroadcast(g, b.shape))

        return Tensor._make(a.values + b.values, (a, b), back)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        a = self
        return Tensor._make(-a.values, (a,), lambda g: a._accum(-g))

    def __sub__(self, other) -> "Tensor":
        return self + (-as_tensor(other))

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            a._accum(_unbroadcast(g * b.values, a.shape))
            b._accum(_unbroadcast(g * a.values, b.shape))

        return Tensor._make(a.values * b.values, (a, b), back)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            a._accum(_unbroadcast(g / b.values, a.shape))
            b._accum(_unbroadcast(-g * a.values / b.values**2, b.shape))

        return Tensor._make(a.values / b.values, (a, b), back)

    def __pow__(self, p: float) -> "Tensor":
        a = self

        def back(g):
            a._accum(g * p * a.values ** (p - 1))

        return Tensor._make(a.values**p, (a,), back)

    def __matmul__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other
        if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
            raise UsageError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

        def back(g):
            if a.requires_grad:
                a._accum(g @ b.values.T)
            if b.requires_grad:
                b._accum(a.values.T @ g)

        return Tensor._make(a.values @ b.values, (a, b), back)

    # -- unary maps -----------------------------------------------------------
    def tanh(self) -> "Tensor":
        a = self
        out = np.tanh(a.values)
        return Tensor._make(out, (a,), lambda g: a._accum(g * (1.0 - out * out)))

    def relu(self) -> "Tensor":
        a = self
        mask = a.values > 0
        return Tensor._make(a.values * mask, (a,), lambda g: a._accum(g * mask))

    def sigmoid(self) -> "Tensor":
        a = self
        out = _sigmoid(a.values)
        return Tensor._make(out, (a,), lambda g: a._accum(g * out * (1.0 - out)))

    def exp(self) -> "Tensor":
        a = self
        out = np.exp(a.values)
        return Tensor._make(out, (a,), lambda g: a._accum(g * out))

    def log(self) -> "Tensor":
        a = self
        return Tensor._make(np.log(a.values), (a,), lambda g: a._accum(g / a.values))

    def clip(self, lo: float, hi: float) -> "Tensor":
        """Clamp values; gradient is zero where the clamp is active."""
        a = self
        inside = (a.values >= lo) & (a.values <= hi)
        return Tensor._make(np.clip(a.values, lo, hi), (a,), lambda g: a._accum(g * inside))

    def minimum(self, bound: float) -> "Tensor":
        a = self
        keep = a.values <= bound
        return Tensor._make(np.minimum(a.values, bound), (a,), lambda g: a._accum(g * keep))

    # -- reductions and reshaping ---------------------------------------------
    def sum(self, axis: int | None = None) -> "Tensor":
        a = self

        def back(g):
            if axis is None:
                a._accum(np.broadcast_to(g, a.shape))
            else:
                a._accum(np.broadcast_to(np.expand_dims(g, axis), a.shape))

        return Tensor._make(a.values.sum(axis=axis), (a,), back)

    def mean(self, axis: int | None = None) -> "Tensor":
        n = self.values.size if axis is None else self.shape[axis]
        return self.sum(axis) * (1.0 / n)

    def __getitem__(self, idx) -> "Tensor":
        a = self

        def back(g):
            full = np.zeros_like(a.values)
            np.add.at(full, idx, g)
            a._accum(full)

        return Tensor._make(a.values[idx], (a,), back)

    def reshape(self, *shape) -> "Tensor":
        a = self
        return Tensor._make(a.values.reshape(*shape), (a,), lambda g: a._accum(g.reshape(a.shape)))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, cuts, axis=axis)):
            t._accum(piece)

    return Tensor._make(np.concatenate([t.values for t in tensors], axis=axis), tuple(tensors), back)


def custom_op(x: Tensor, forward: Callable[[np.ndarray], np.ndarray],
              vjp: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]) -> Tensor:
    """Record a user function with a hand-written vector-Jacobian product.

    ``vjp(x_values, out_values, out_grad)`` must return the input gradient.
    """
    out = forward(x.values)
    return Tensor._make(out, (x,), lambda g: x._accum(vjp(x.values, out, g)))


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if not isinstance(loss, Tensor) or loss.values.size != 1:
        raise UsageError("backward needs a scalar Tensor")
    if not loss.recorded:
        raise UsageError("backward called on a tensor with no recorded graph")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    for node in order:
        if node._backward is not None:
            node.grad = None
    loss.grad = np.ones_like(loss.values)
    # reverse post-order: every consumer has pushed its share before a node runs
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        g, node.grad = node.grad, None
        node._backward(g)


def grad(loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of ``loss`` for ``params``; unreachable parameters get zeros."""
    for p in params:
        p.grad = None
    backward(loss)
    out = [np.zeros_like(p.values) if p.grad is None else p.grad for p in params]
    for p in params:
        p.grad = None
    return out


# -- networks -----------------------------------------------------------------

ACTIVATIONS = ("relu", "tanh", "identity", "sigmoid")


def _activate(x, kind: str):
    if kind == "identity":
        return x
    if isinstance(x, Tensor):
        return getattr(x, kind)()
    if kind == "tanh":
        return np.tanh(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    return _sigmoid(x)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Mlp:
    """Fully connected net ``x @ W + b`` with a shared hidden activation."""

    def __init__(self, widths: Sequence[int], activation: str = "tanh",
                 out_activation: str = "identity", rng: np.random.Generator | None = None,
                 trainable: bool = True):
        if len(widths) < 2:
            raise UsageError("an Mlp needs at least input and output widths")
        for kind in (activation, out_activation):
            if kind not in ACTIVATIONS:
                raise UsageError(f"unknown activation {kind!r}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.widths = list(widths)
        self.activation = activation
        self.out_activation = out_activation
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for i, (fi, fo) in enumerate(zip(widths[:-1], widths[1:])):
            self.weights.append(Tensor(glorot_uniform(rng, fi, fo), trainable, f"W{i}"))
            self.biases.append(Tensor(np.zeros(fo), trainable, f"b{i}"))

    @property
    def params(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def forward(self, x) -> Tensor:
        """Recording forward pass."""
        x = as_tensor(x)
        if x.values.ndim != 2 or x.shape[1] != self.widths[0]:
            raise UsageError(f"expected input of shape [batch, {self.widths[0]}], got {x.shape}")
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w + b
            x = _activate(x, self.activation if i < last else self.out_activation)
        return x

    __call__ = forward

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Plain numpy forward pass with nothing recorded."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.widths[0]:
            raise UsageError(f"expected input of shape [batch, {self.widths[0]}], got {x.shape}")
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = _activate(x @ w.values + b.values, self.activation if i < last else self.out_activation)
        return x

    def state_dict(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}W{i}"] = w.values.copy()
            out[f"{prefix}b{i}"] = b.values.copy()
        return out

    def load_state_dict(self, state: dict[str, np.ndarray], prefix: str = "") -> None:
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            w.values = np.array(state[f"{prefix}W{i}"], dtype=np.float64)
            b.values = np.array(state[f"{prefix}b{i}"], dtype=np.float64)


# -- optimisation ---------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(state: AdamState, params: Sequence[Tensor], grads: Sequence[np.ndarray],
              maximize: bool = False) -> Sequence[Tensor]:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads):
        raise UsageError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p.values) for p in params]
        state.v = [np.zeros_like(p.values) for p in params]
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    sign = 1.0 if maximize else -1.0
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.values.shape or m.shape != g.shape:
            raise UsageError(f"gradient shape {g.shape} does not match parameter {p.values.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.values = p.values + sign * state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params


def power_iteration(weight: np.ndarray, iters: int, v0: np.ndarray | None = None,
                    seed: int = 0, tol: float = 0.0) -> tuple[float, np.ndarray]:
    """Largest singular value by power iteration on W^T W; returns (sigma, right vector).

    With ``tol > 0`` the loop stops once the estimate changes by at most
    ``tol`` relative to itself.
    """
    w = np.asarray(weight, dtype=np.float64)
    if w.size == 0:
        raise UsageError("spectral norm of an empty matrix")
    if iters < 1:
        raise UsageError("iters must be >= 1")
    v = np.random.default_rng(seed).standard_normal(w.shape[1]) if v0 is None else np.array(v0, dtype=np.float64)
    v /= np.linalg.norm(v) or 1.0
    sigma = 0.0
    for _ in range(iters):
        u = w @ v
        nu = np.linalg.norm(u)
        if nu == 0.0:
            return 0.0, v
        u /= nu
        v = w.T @ u
        prev, sigma = sigma, np.linalg.norm(v)
        if sigma == 0.0:
            return 0.0, v
        v /= sigma
        if tol > 0 and abs(sigma - prev) <= tol * sigma:
            break
    return float(sigma), v


def spectral_norm(weight: np.ndarray, iters: int = 100, seed: int = 0) -> float:
    return power_iteration(weight, iters, seed=seed)[0]


# -- checkpoints ------------------------------------------------------------------

def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    blob = {
        "format": "inrep-lab-checkpoint",
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "arrays": {k: {"shape": list(np.shape(a)), "data": np.asarray(a, dtype=np.float64).ravel().tolist()}
                   for k, a in sorted(arrays.items())},
    }
    Path(path).write_text(json.dumps(blob))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    blob = json.loads(Path(path).read_text())
    if blob.get("format") != "inrep-lab-checkpoint":
        raise UsageError(f"{path} is not an inrep-lab checkpoint")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise UsageError(f"unsupported checkpoint version {blob.get('version')}")
    arrays = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in blob["arrays"].items()}
    return arrays, blob["meta"]


def parameters_digest(arrays: Iterable[np.ndarray]) -> str:
    import hashlib

    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a, dtype=np.float64)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()
