"""Conditioning a frozen unconditional generator with a modifier and PU critics.

The loop follows the usual alternating scheme: ``critic_steps`` rounds in which
every class head (plus the shared trunk) ascends its PU value on a stratified
labeled batch, then one round in which the modifier and label embedding
descend the same per-class values on fresh noise.
"""

from __future__ import annotations

import copy
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .gradcore import (AdamState, Mlp, Tensor, UsageError, adam_step, grad,
                       load_checkpoint, parameters_digest, save_checkpoint)
from .metrics import MetricsReport, evaluate
from .mixture import GaussianMixtureSpec, LabeledDataset, sample_mixture
from .modifier import ModifierConfig, ModifierNet
from .oracle import MixtureTransport
from .puloss import SCORE_EPS, pu_value_tensor
from .seeding import child_seed, substream


class TrainingAborted(RuntimeError):
    """A loss became non-finite; the report and last good state are attached."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


# --------------------------------------------------------------------------
# Data scenarios
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    kind: str = "clean"                      # clean | imbalance | noise
    minor_classes: tuple[int, ...] = ()
    keep_fraction: float = 1.0
    flip_pairs: tuple[tuple[int, int], ...] = ()
    flip_prob: float = 0.0

    def __post_init__(self):
        if self.kind not in ("clean", "imbalance", "noise"):
            raise UsageError(f"unknown scenario {self.kind!r}")
        if not 0.0 < self.keep_fraction <= 1.0:
            raise UsageError("keep_fraction must lie in (0, 1]")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise UsageError("flip_prob must lie in [0, 1]")
        object.__setattr__(self, "minor_classes", tuple(int(c) for c in self.minor_classes))
        object.__setattr__(self, "flip_pairs", tuple((int(a), int(b)) for a, b in self.flip_pairs))

    @property
    def label(self) -> str:
        if self.kind == "imbalance":
            return f"imbalance{list(self.minor_classes)}@{self.keep_fraction:g}"
        if self.kind == "noise":
            return "noise" + "".join(f"{a}>{b}" for a, b in self.flip_pairs) + f"@{self.flip_prob:g}"
        return "clean"


def make_scenario(data: LabeledDataset, scenario: Scenario, seed=0) -> LabeledDataset:
    """Subsample minor classes or corrupt labels; deterministic for a seed."""
    rng = np.random.default_rng(seed)
    if scenario.kind == "clean":
        return data.subset(np.arange(len(data)))
    if scenario.kind == "imbalance":
        keep = np.ones(len(data), dtype=bool)
        for c in scenario.minor_classes:
            idx = np.flatnonzero(data.y == c)
            n_keep = int(round(scenario.keep_fraction * len(idx)))
            if n_keep == 0:
                raise UsageError(f"class {c} would be empty after subsampling")
            drop = rng.permutation(idx)[n_keep:]
            keep[drop] = False
        return data.subset(np.flatnonzero(keep))
    out = data.subset(np.arange(len(data)))
    original = data.y.copy()
    for src, dst in scenario.flip_pairs:
        idx = np.flatnonzero(original == src)
        flip = idx[rng.random(len(idx)) < scenario.flip_prob]
        out.y[flip] = dst
        out.flipped[flip] = True
    for c in np.unique(original):
        if not np.any(out.y == c):
            raise UsageError(f"class {c} would be empty after label flipping")
    return out


def select_labeled(data: LabeledDataset, fraction: float, seed=0) -> LabeledDataset:
    """Uniformly choose round(fraction * n) points to keep their labels."""
    if not 0.0 < fraction <= 1.0:
        raise UsageError("labeled fraction must lie in (0, 1]")
    n = max(1, int(round(fraction * len(data))))
    idx = np.sort(np.random.default_rng(seed).permutation(len(data))[:n])
    return data.subset(idx)


# --------------------------------------------------------------------------
# Frozen generators
# --------------------------------------------------------------------------


class OracleGenerator:
    """Exact mixture sampler used in place of a trained network."""

    kind = "oracle"

    def __init__(self, spec: GaussianMixtureSpec, latent_dim: int):
        self.transport = MixtureTransport(spec, latent_dim)
        self.latent_dim = latent_dim

    def apply(self, z: np.ndarray) -> np.ndarray:
        return self.transport.apply(z)

    def forward(self, z: Tensor) -> Tensor:
        return self.transport.forward(z)

    def arrays(self) -> list[np.ndarray]:
        return self.transport.parameters()

    def param_tensors(self) -> list[Tensor]:
        return []

    def digest(self) -> str:
        return parameters_digest(self.arrays())


class MlpGenerator:
    """A trained MLP generator; its weights never require gradients."""

    kind = "trained"

    def __init__(self, net: Mlp):
        self.net = net
        for p in net.params:
            p.requires_grad = False
        self.latent_dim = net.widths[0]

    def apply(self, z: np.ndarray) -> np.ndarray:
        return self.net.apply(z)

    def forward(self, z: Tensor) -> Tensor:
        return self.net.forward(z)

    def arrays(self) -> list[np.ndarray]:
        return [p.values for p in self.net.params]

    def param_tensors(self) -> list[Tensor]:
        return list(self.net.params)

    def digest(self) -> str:
        return parameters_digest(self.arrays())

    def save(self, path) -> None:
        save_checkpoint(path, self.net.state_dict("G."), {"kind": "mlp-generator", "widths": self.net.widths,
                                                           "activation": self.net.activation})

    @classmethod
    def load(cls, path) -> "MlpGenerator":
        arrays, meta = load_checkpoint(path)
        if meta.get("kind") != "mlp-generator":
            raise UsageError(f"{path} does not hold a generator")
        net = Mlp(meta["widths"], activation=meta["activation"], trainable=False)
        net.load_state_dict(arrays, "G.")
        return cls(net)


@dataclass(frozen=True)
class UganConfig:
    mode: str = "oracle"              # oracle | trained
    latent_dim: int = 12
    hidden: tuple[int, ...] = (128, 128)
    steps: int = 4000
    batch_size: int = 256
    lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.999
    num_data: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("oracle", "trained"):
            raise UsageError("ugan mode must be 'oracle' or 'trained'")


def pretrain_ugan(source, cfg: UganConfig = UganConfig()):
    """Return a frozen unconditional generator for ``source``.

    ``source`` is a mixture spec or an unlabeled sample array. Oracle mode needs
    the spec and skips training. Trained mode fits an MLP generator with the
    non-saturating loss against an unconditional discriminator.
    """
    if cfg.mode == "oracle":
        if not isinstance(source, GaussianMixtureSpec):
            raise UsageError("oracle mode needs the mixture spec")
        return OracleGenerator(source, cfg.latent_dim)
    if isinstance(source, GaussianMixtureSpec):
        data = sample_mixture(source, cfg.num_data, child_seed(cfg.seed, "ugan", "data")).x
    else:
        data = np.asarray(source, dtype=np.float64)
    rng = substream(cfg.seed, "ugan", "train")
    g = Mlp([cfg.latent_dim, *cfg.hidden, 2], activation="relu", rng=substream(cfg.seed, "ugan", "g-init"))
    d = Mlp([2, *cfg.hidden, 1], activation="relu", rng=substream(cfg.seed, "ugan", "d-init"))
    g_opt = AdamState(cfg.lr, cfg.beta1, cfg.beta2)
    d_opt = AdamState(cfg.lr, cfg.beta1, cfg.beta2)
    lo, hi = SCORE_EPS, 1.0 - SCORE_EPS
    for step in range(cfg.steps):
        real = data[rng.integers(0, len(data), cfg.batch_size)]
        fake = g.apply(rng.standard_normal((cfg.batch_size, cfg.latent_dim)))
        s = d.forward(np.concatenate([real, fake])).sigmoid().clip(lo, hi)
        n = cfg.batch_size
        d_loss = -(s[:n].log().mean() + (1.0 - s[n:]).log().mean())
        adam_step(d_opt, d.params, grad(d_loss, d.params))
        z = Tensor(rng.standard_normal((cfg.batch_size, cfg.latent_dim)))
        s_fake = d.forward(g.forward(z)).sigmoid().clip(lo, hi)
        g_loss = -s_fake.log().mean()
        adam_step(g_opt, g.params, grad(g_loss, g.params))
        if not (math.isfinite(d_loss.item()) and math.isfinite(g_loss.item())):
            raise TrainingAborted(f"UGAN loss became non-finite at step {step}")
    return MlpGenerator(g)


# --------------------------------------------------------------------------
# Discriminator bank
# --------------------------------------------------------------------------


class DiscriminatorBank:
    """Shared trunk with one linear head per class; D_y = sigmoid(H_y(trunk(x)))."""

    def __init__(self, num_classes: int, hidden: tuple[int, ...] = (64, 64), activation: str = "tanh",
                 rng: np.random.Generator | None = None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.num_classes = num_classes
        self.trunk = Mlp([2, *hidden], activation=activation, out_activation=activation, rng=rng)
        width = hidden[-1]
        limit = math.sqrt(6.0 / (width + 1))
        self.head_w = [Tensor(rng.uniform(-limit, limit, (width, 1)), True, f"H{y}.W") for y in range(num_classes)]
        self.head_b = [Tensor(np.zeros(1), True, f"H{y}.b") for y in range(num_classes)]

    def class_params(self, y: int) -> list[Tensor]:
        return self.trunk.params + [self.head_w[y], self.head_b[y]]

    @property
    def params(self) -> list[Tensor]:
        out = list(self.trunk.params)
        for w, b in zip(self.head_w, self.head_b):
            out += [w, b]
        return out

    def score(self, x, y: int) -> Tensor:
        """Recorded scores of class head ``y`` for a batch, shape [n]."""
        feat = self.trunk.forward(x)
        return (feat @ self.head_w[y] + self.head_b[y]).sigmoid().reshape(-1)

    def apply(self, x: np.ndarray, y: int) -> np.ndarray:
        feat = self.trunk.apply(x)
        logits = feat @ self.head_w[y].values + self.head_b[y].values
        return 1.0 / (1.0 + np.exp(-logits[:, 0]))

    def state_dict(self) -> dict[str, np.ndarray]:
        out = self.trunk.state_dict("D.")
        for y, (w, b) in enumerate(zip(self.head_w, self.head_b)):
            out[f"H{y}.W"] = w.values.copy()
            out[f"H{y}.b"] = b.values.copy()
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.trunk.load_state_dict(state, "D.")
        for y, (w, b) in enumerate(zip(self.head_w, self.head_b)):
            w.values = np.array(state[f"H{y}.W"])
            b.values = np.array(state[f"H{y}.b"])


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    critic_steps: int = 5
    iterations: int = 20_000
    lr_modifier: float = 2e-4
    lr_discriminator: float = 2e-5
    beta1: float = 0.5
    beta2: float = 0.999
    pi_schedule: str = "constant"     # constant | linear
    pi_start: float | None = None     # None means the labeled class prior
    pi_end: float = 0.9
    clip: bool = True
    saturating: bool = True
    stale_fakes: bool = False         # evaluate the modifier loss on the critic-phase noise
    seed: int = 0
    labeled_fraction: float = 0.01
    scenario: Scenario = Scenario()
    d_u: int = 8
    d_y: int = 4
    modifier_blocks: int = 3
    modifier_hidden: int = 32
    lipschitz_cap: float | None = 0.9
    disc_hidden: tuple[int, ...] = (64, 64)
    disc_activation: str = "tanh"
    snapshot_every: int = 1000
    eval_samples: int = 1000
    eval_real: int = 4000
    recall_k: int = 3
    max_seconds: float | None = None  # wall-clock budget; the loop stops early once it is spent

    def __post_init__(self):
        if self.critic_steps < 1 or self.batch_size < 1 or self.iterations < 0:
            raise UsageError("critic_steps and batch_size must be >= 1, iterations >= 0")
        if self.lr_modifier <= 0 or self.lr_discriminator <= 0:
            raise UsageError("learning rates must be positive")
        if self.pi_schedule not in ("constant", "linear"):
            raise UsageError("pi_schedule must be 'constant' or 'linear'")
        if self.pi_start is not None and not 0.0 <= self.pi_start <= 1.0:
            raise UsageError("pi_start must lie in [0, 1]")
        if self.snapshot_every < 1:
            raise UsageError("snapshot_every must be >= 1")
        if self.max_seconds is not None and not self.max_seconds > 0:
            raise UsageError("max_seconds must be positive")

    def modifier_config(self, num_classes: int) -> ModifierConfig:
        return ModifierConfig(num_classes, self.d_u, self.d_y, self.modifier_blocks,
                              self.modifier_hidden, self.lipschitz_cap)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scenario"] = asdict(self.scenario)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("scenario"), dict):
            d["scenario"] = Scenario(**d["scenario"])
        if "disc_hidden" in d:
            d["disc_hidden"] = tuple(d["disc_hidden"])
        return cls(**d)


@dataclass
class RunReport:
    config: dict
    snapshots: list[dict] = field(default_factory=list)    # {"iteration": t, "metrics": {...}}
    wall_clock: float = 0.0
    ugan_digest_before: str = ""
    ugan_digest_after: str = ""
    clip_active_fraction: list[float] = field(default_factory=list)
    max_spectral_norm: float = 0.0
    cap_violations: int = 0
    iterations_run: int = 0
    aborted: bool = False
    message: str = ""

    @property
    def final(self) -> MetricsReport | None:
        return MetricsReport.from_dict(self.snapshots[-1]["metrics"]) if self.snapshots else None

    @property
    def ugan_unchanged(self) -> bool:
        return self.ugan_digest_before == self.ugan_digest_after != ""

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, include_clock: bool = True) -> str:
        d = self.to_dict()
        if not include_clock:
            d.pop("wall_clock")
        return json.dumps(d, sort_keys=True, indent=1, allow_nan=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "RunReport":
        return cls(**json.loads(Path(path).read_text()))

    def final_csv(self) -> str:
        m = self.final
        if m is None:
            return "metric,value\n"
        rows = ["metric,value", f"overall_w2,{m.overall_w2:.10g}", f"recall,{m.recall:.10g}",
                f"conditional_accuracy,{m.conditional_accuracy:.10g}", f"cas_lite,{m.cas_lite:.10g}"]
        rows += [f"w2_class{c},{v:.10g}" for c, v in enumerate(m.per_class_w2)]
        rows += [f"accuracy_class{c},{v:.10g}" for c, v in enumerate(m.per_class_accuracy)]
        return "\n".join(rows) + "\n"


def _stratified_sizes(total: int, k: int) -> list[int]:
    base, extra = divmod(total, k)
    return [max(1, base + (1 if c < extra else 0)) for c in range(k)]


def _pi_at(cfg: TrainConfig, prior: np.ndarray, t: int) -> np.ndarray:
    start = prior if cfg.pi_start is None else np.full_like(prior, cfg.pi_start)
    if cfg.pi_schedule == "constant" or cfg.iterations <= 1:
        return start
    frac = t / (cfg.iterations - 1)
    return start + (cfg.pi_end - start) * frac


def generate_conditional(g, m: ModifierNet, y: int, n: int, seed) -> np.ndarray:
    """x = G(M(concat(u, E(y)))) for n seeded standard normal noise draws."""
    if not isinstance(y, (int, np.integer)) or not 0 <= y < m.cfg.num_classes:
        raise UsageError(f"class must be an integer in [0, {m.cfg.num_classes})")
    if n < 0:
        raise UsageError("n must be non-negative")
    u = np.random.default_rng(seed).standard_normal((n, m.d_u))
    if n == 0:
        return np.zeros((0, 2))
    return g.apply(m.apply(u, np.full(n, y)))


def evaluate_modifier(g, m: ModifierNet, spec: GaussianMixtureSpec, real: LabeledDataset,
                      n_per_class: int, seed, k: int = 3) -> MetricsReport:
    xs, ys = [], []
    for c in range(spec.num_classes):
        xs.append(generate_conditional(g, m, c, n_per_class, child_seed(seed, "eval", c)))
        ys.append(np.full(n_per_class, c))
    return evaluate(np.concatenate(xs), np.concatenate(ys), spec, real.x, real.y, k)


class _Trainer:
    def __init__(self, g, data: LabeledDataset, spec: GaussianMixtureSpec, cfg: TrainConfig):
        self.g, self.data, self.spec, self.cfg = g, data, spec, cfg
        k = spec.num_classes
        if g.latent_dim != cfg.d_u + cfg.d_y:
            raise UsageError(f"generator latent width {g.latent_dim} must equal d_u + d_y = {cfg.d_u + cfg.d_y}")
        self.pools = [np.flatnonzero(data.y == c) for c in range(k)]
        for c, pool in enumerate(self.pools):
            if pool.size == 0:
                raise UsageError(f"class {c} has no labeled samples")
        self.prior = np.array([p.size for p in self.pools], dtype=np.float64) / len(data)
        self.modifier = ModifierNet(cfg.modifier_config(k), seed=substream(cfg.seed, "init", "modifier"))
        self.bank = DiscriminatorBank(k, cfg.disc_hidden, cfg.disc_activation, substream(cfg.seed, "init", "bank"))
        self.d_opts = [AdamState(cfg.lr_discriminator, cfg.beta1, cfg.beta2) for _ in range(k)]
        self.m_opt = AdamState(cfg.lr_modifier, cfg.beta1, cfg.beta2)
        self.rng_data = substream(cfg.seed, "train", "data")
        self.rng_noise = substream(cfg.seed, "train", "critic-noise")
        self.rng_gen = substream(cfg.seed, "train", "modifier-noise")
        self.sizes = _stratified_sizes(cfg.batch_size, k)
        self.last_real = [None] * k
        self.last_noise = [None] * k
        self.clip_hits = np.zeros(k)
        self.clip_total = np.zeros(k)

    def critic_round(self, pi: np.ndarray) -> None:
        cfg, m, k = self.cfg, self.modifier, self.spec.num_classes
        reals, noises = [], []
        for c in range(k):
            reals.append(self.data.x[self.pools[c][self.rng_data.integers(0, self.pools[c].size, self.sizes[c])]])
            noises.append(self.rng_noise.standard_normal((self.sizes[c], cfg.d_u)))
        labels = np.concatenate([np.full(s, c) for c, s in enumerate(self.sizes)])
        fakes = self.g.apply(m.apply(np.concatenate(noises), labels))
        start = 0
        for c in range(k):
            fake_c = fakes[start:start + self.sizes[c]]
            start += self.sizes[c]
            n_real = len(reals[c])
            scores = self.bank.score(np.concatenate([reals[c], fake_c]), c)
            value, gated = pu_value_tensor(scores[:n_real], scores[n_real:], float(pi[c]), cfg.clip)
            if not math.isfinite(value.item()):
                raise FloatingPointError(f"critic value for class {c} is not finite")
            params = self.bank.class_params(c)
            adam_step(self.d_opts[c], params, grad(value, params), maximize=True)
            self.last_real[c] = reals[c]
            self.last_noise[c] = noises[c]

    def modifier_round(self, pi: np.ndarray) -> None:
        cfg, m, k = self.cfg, self.modifier, self.spec.num_classes
        for c in range(k):
            if cfg.stale_fakes:
                u = self.last_noise[c]
            else:
                u = self.rng_gen.standard_normal((cfg.batch_size, cfg.d_u))
            x_fake = self.g.forward(m.forward(u, np.full(len(u), c)))
            fake_scores = self.bank.score(x_fake, c)
            real_scores = Tensor(self.bank.apply(self.last_real[c], c))
            value, gated = pu_value_tensor(real_scores, fake_scores, float(pi[c]), cfg.clip)
            self.clip_total[c] += 1
            self.clip_hits[c] += gated
            if cfg.saturating:
                loss = value
            else:
                loss = -fake_scores.clip(SCORE_EPS, 1.0 - SCORE_EPS).log().mean()
            if not math.isfinite(loss.item()):
                raise FloatingPointError(f"modifier loss for class {c} is not finite")
            adam_step(self.m_opt, m.params, grad(loss, m.params))
            m.normalize()

    def state(self) -> dict:
        return {"modifier": self.modifier.state_dict(), "bank": self.bank.state_dict()}

    def restore(self, state: dict) -> None:
        self.modifier.load_state_dict(state["modifier"])
        self.bank.load_state_dict(state["bank"])


def train_inrep(g, data: LabeledDataset, cfg: TrainConfig, spec: GaussianMixtureSpec | None = None,
                eval_real: LabeledDataset | None = None, log=None):
    """Train modifier and discriminator bank; returns (modifier, bank, report).

    ``g`` stays frozen: its parameter digest is recorded before and after.
    ``spec`` is only used for evaluation snapshots. A non-finite loss restores
    the last snapshot and raises :class:`TrainingAborted` carrying the report.
    """
    from .mixture import default_spec

    spec = spec or default_spec()
    if len(data) == 0:
        raise UsageError("labeled dataset is empty")
    if eval_real is None:
        eval_real = sample_mixture(spec, cfg.eval_real, child_seed(cfg.seed, "eval", "real"))
    tr = _Trainer(g, data, spec, cfg)
    report = RunReport(config=cfg.to_dict(), ugan_digest_before=g.digest())
    start = time.perf_counter()
    good = copy.deepcopy(tr.state())
    cap = cfg.lipschitz_cap
    max_sigma = tr.modifier.max_spectral_norm()

    def snapshot(t: int) -> None:
        metrics = evaluate_modifier(g, tr.modifier, spec, eval_real, cfg.eval_samples,
                                    child_seed(cfg.seed, "snapshot"), cfg.recall_k)
        report.snapshots.append({"iteration": t, "metrics": metrics.to_dict()})
        if log is not None:
            log(f"iter {t:6d}  acc {metrics.conditional_accuracy:.3f}  recall {metrics.recall:.3f}  "
                f"w2 {np.round(metrics.per_class_w2, 3).tolist()}")

    try:
        for t in range(cfg.iterations):
            pi = _pi_at(cfg, tr.prior, t)
            with np.errstate(over="ignore"):
                for _ in range(cfg.critic_steps):
                    tr.critic_round(pi)
                tr.modifier_round(pi)
            sigma = tr.modifier.max_spectral_norm()
            max_sigma = max(max_sigma, sigma)
            if cap is not None and sigma > cap + 1e-3:
                report.cap_violations += 1
            report.iterations_run = t + 1
            out_of_time = cfg.max_seconds is not None and time.perf_counter() - start > cfg.max_seconds
            if (t + 1) % cfg.snapshot_every == 0 or t + 1 == cfg.iterations or out_of_time:
                snapshot(t + 1)
                good = copy.deepcopy(tr.state())
            if out_of_time:
                report.message = f"time budget of {cfg.max_seconds:g} s reached after {t + 1} iterations"
                break
    except FloatingPointError as exc:
        tr.restore(good)
        report.aborted = True
        report.message = str(exc)
    if cfg.iterations == 0:
        snapshot(0)
    report.max_spectral_norm = float(max_sigma)
    report.clip_active_fraction = (tr.clip_hits / np.maximum(tr.clip_total, 1)).tolist()
    report.ugan_digest_after = g.digest()
    report.wall_clock = time.perf_counter() - start
    if report.aborted:
        raise TrainingAborted(report.message, report)
    return tr.modifier, tr.bank, report


def save_modifier(path, m: ModifierNet) -> None:
    meta = {"kind": "modifier", "config": asdict(m.cfg)}
    save_checkpoint(path, m.state_dict(), meta)


def load_modifier(path) -> ModifierNet:
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "modifier":
        raise UsageError(f"{path} does not hold a modifier")
    m = ModifierNet(ModifierConfig(**meta["config"]))
    m.load_state_dict(arrays)
    return m
