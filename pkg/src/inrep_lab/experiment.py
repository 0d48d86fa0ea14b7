"""Run matrices over labeled fraction x scenario x seed, plus figure emission.

Configs are INI-style key-value files read with :mod:`configparser`::

    [experiment]
    schema_version = 1
    id = sweep
    ugan_mode = oracle
    fractions = 0.01, 0.1
    scenarios = clean; imbalance:3@0.1; noise:0>1@0.4
    seeds = 0, 1, 2

    [train]
    iterations = 2000

Sections ``[mixture]``, ``[ugan]`` and ``[train]`` override the defaults of
:class:`GaussianMixtureSpec`, :class:`UganConfig` and :class:`TrainConfig`.
Unknown sections or keys are errors.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import math
import re
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .gradcore import UsageError, load_checkpoint, save_checkpoint
from .mixture import GaussianMixtureSpec, LabeledDataset, default_spec, sample_mixture
from .seeding import child_seed
from .trainer import (MlpGenerator, OracleGenerator, RunReport, Scenario, TrainConfig, UganConfig,
                      generate_conditional, load_modifier, make_scenario, pretrain_ugan, save_modifier,
                      select_labeled, train_inrep)

SCHEMA_VERSION = 1

AGGREGATE_METRICS = ("overall_w2", "mean_class_w2", "max_class_w2", "recall", "conditional_accuracy", "cas_lite")


class ConfigError(UsageError):
    """Malformed or unknown configuration entry."""


# --------------------------------------------------------------------------
# Scenario strings
# --------------------------------------------------------------------------


def parse_scenario(text: str) -> Scenario:
    """``clean``, ``imbalance:3,1@0.1`` or ``noise:0>1,2>3@0.4``."""
    text = text.strip()
    if text == "clean":
        return Scenario()
    m = re.fullmatch(r"(imbalance|noise):([^@]+)@([0-9.eE+-]+)", text)
    if not m:
        raise ConfigError(f"cannot parse scenario {text!r}")
    kind, body, value = m.group(1), m.group(2), float(m.group(3))
    try:
        if kind == "imbalance":
            return Scenario("imbalance", minor_classes=tuple(int(c) for c in body.split(",")), keep_fraction=value)
        pairs = tuple(tuple(int(v) for v in p.split(">")) for p in body.split(","))
        if any(len(p) != 2 for p in pairs):
            raise ValueError("flip pairs look like a>b")
        return Scenario("noise", flip_pairs=pairs, flip_prob=value)
    except (ValueError, UsageError) as exc:
        raise ConfigError(f"bad scenario {text!r}: {exc}") from exc


def format_scenario(s: Scenario) -> str:
    if s.kind == "imbalance":
        return "imbalance:" + ",".join(map(str, s.minor_classes)) + f"@{s.keep_fraction:g}"
    if s.kind == "noise":
        return "noise:" + ",".join(f"{a}>{b}" for a, b in s.flip_pairs) + f"@{s.flip_prob:g}"
    return "clean"


# --------------------------------------------------------------------------
# Config
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    experiment_id: str = "experiment"
    spec: GaussianMixtureSpec = field(default_factory=default_spec)
    ugan: UganConfig = UganConfig()
    train: TrainConfig = TrainConfig()
    fractions: tuple[float, ...] = (0.01,)
    scenarios: tuple[Scenario, ...] = (Scenario(),)
    seeds: tuple[int, ...] = (0,)
    pool_size: int = 10_000
    out_dir: str = "runs"
    workers: int = 1

    def __post_init__(self):
        if not self.fractions or not self.scenarios or not self.seeds:
            raise ConfigError("fractions, scenarios and seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if any(not 0.0 < f <= 1.0 for f in self.fractions):
            raise ConfigError("labeled fractions must lie in (0, 1]")
        if self.ugan.latent_dim != self.train.d_u + self.train.d_y:
            raise ConfigError(f"ugan latent_dim {self.ugan.latent_dim} must equal d_u + d_y "
                              f"= {self.train.d_u + self.train.d_y}")
        if self.pool_size < 1 or self.workers < 1:
            raise ConfigError("pool_size and workers must be >= 1")

    def cells(self) -> list["Cell"]:
        out = [Cell(f, s, seed) for f in self.fractions for s in self.scenarios for seed in self.seeds]
        return sorted(out, key=lambda c: c.key)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "experiment_id": self.experiment_id,
            "spec": self.spec.to_dict(),
            "ugan": asdict(self.ugan),
            "train": self.train.to_dict(),
            "fractions": list(self.fractions),
            "scenarios": [format_scenario(s) for s in self.scenarios],
            "seeds": list(self.seeds),
            "pool_size": self.pool_size,
            "out_dir": self.out_dir,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {d.get('schema_version')!r}")
        ugan = dict(d["ugan"])
        ugan["hidden"] = tuple(ugan["hidden"])
        return cls(
            experiment_id=d["experiment_id"], spec=GaussianMixtureSpec.from_dict(d["spec"]),
            ugan=UganConfig(**ugan), train=TrainConfig.from_dict(d["train"]),
            fractions=tuple(d["fractions"]), scenarios=tuple(parse_scenario(s) for s in d["scenarios"]),
            seeds=tuple(d["seeds"]), pool_size=d["pool_size"], out_dir=d["out_dir"], workers=d["workers"],
        )


@dataclass(frozen=True)
class Cell:
    fraction: float
    scenario: Scenario
    seed: int

    @property
    def key(self) -> tuple:
        return (self.fraction, format_scenario(self.scenario), self.seed)

    @property
    def name(self) -> str:
        scen = re.sub(r"[^A-Za-z0-9.]+", "-", format_scenario(self.scenario)).strip("-")
        return f"f{self.fraction:g}_{scen}_s{self.seed}"


def _parse_value(raw: str, kind: Any, key: str):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "yes", "1", "on")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind == "optfloat":
            return None if raw.lower() in ("none", "") else float(raw)
        if kind == "ints":
            return tuple(int(v) for v in raw.replace(",", " ").split())
        if kind == "floats":
            return tuple(float(v) for v in raw.replace(",", " ").split())
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


# Field kinds for the [train] and [ugan] sections; scenario, seed and labeled
# fraction come from the matrix axes instead.
_TRAIN_KINDS = {
    "batch_size": int, "critic_steps": int, "iterations": int, "lr_modifier": float,
    "lr_discriminator": float, "beta1": float, "beta2": float, "pi_schedule": str,
    "pi_start": "optfloat", "pi_end": float, "clip": bool, "saturating": bool, "stale_fakes": bool,
    "d_u": int, "d_y": int, "modifier_blocks": int, "modifier_hidden": int,
    "lipschitz_cap": "optfloat", "disc_hidden": "ints", "disc_activation": str,
    "snapshot_every": int, "eval_samples": int, "eval_real": int, "recall_k": int, "max_seconds": "optfloat",
}
_UGAN_KINDS = {
    "latent_dim": int, "hidden": "ints", "steps": int, "batch_size": int, "lr": float,
    "beta1": float, "beta2": float, "num_data": int,
}
_EXPERIMENT_KEYS = {"schema_version", "id", "ugan_mode", "fractions", "scenarios", "seeds",
                    "pool_size", "out_dir", "workers"}
_MIXTURE_KEYS = {"means", "covariances", "weights", "labels"}


def _rows(raw: str, width: int, key: str) -> np.ndarray:
    try:
        rows = [[float(v) for v in r.split()] for r in raw.split(";") if r.strip()]
        arr = np.array(rows, dtype=np.float64)
    except ValueError as exc:
        raise ConfigError(f"bad numbers in mixture {key}") from exc
    if arr.ndim != 2 or arr.shape[1] != width:
        raise ConfigError(f"mixture {key} needs {width} numbers per ';'-separated row")
    return arr


def _parse_mixture(sec) -> GaussianMixtureSpec:
    base = default_spec()
    means = _rows(sec["means"], 2, "means") if "means" in sec else base.means
    k = len(means)
    covs = (_rows(sec["covariances"], 4, "covariances").reshape(-1, 2, 2)
            if "covariances" in sec else np.stack([np.eye(2)] * k))
    weights = (np.array(_parse_value(sec["weights"], "floats", "weights"))
               if "weights" in sec else np.full(k, 1.0 / k))
    labels = (np.array(_parse_value(sec["labels"], "ints", "labels"))
              if "labels" in sec else np.arange(k))
    try:
        return GaussianMixtureSpec(means, covs, weights, labels)
    except (ValueError, UsageError) as exc:
        raise ConfigError(f"invalid mixture: {exc}") from exc


def parse_config_text(text: str, base_dir: str | Path = ".") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from exc
    unknown = set(parser.sections()) - {"experiment", "mixture", "ugan", "train"}
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}")
    if "experiment" not in parser:
        raise ConfigError("missing [experiment] section")
    exp = parser["experiment"]
    tables = {"experiment": _EXPERIMENT_KEYS, "mixture": _MIXTURE_KEYS, "ugan": set(_UGAN_KINDS),
              "train": set(_TRAIN_KINDS)}
    for name, allowed in tables.items():
        if name in parser:
            bad = set(parser[name]) - allowed
            if bad:
                raise ConfigError(f"unknown key(s) in [{name}]: {sorted(bad)}")
    if exp.get("schema_version", "").strip() != str(SCHEMA_VERSION):
        raise ConfigError(f"[experiment] schema_version must be {SCHEMA_VERSION}")

    spec = _parse_mixture(parser["mixture"]) if "mixture" in parser else default_spec()
    train_kw = {k: _parse_value(v, _TRAIN_KINDS[k], k) for k, v in parser["train"].items()} if "train" in parser else {}
    ugan_kw = {k: _parse_value(v, _UGAN_KINDS[k], k) for k, v in parser["ugan"].items()} if "ugan" in parser else {}
    try:
        train = TrainConfig(**train_kw)
        ugan = UganConfig(mode=exp.get("ugan_mode", "oracle").strip(), **ugan_kw)
    except (TypeError, UsageError) as exc:
        raise ConfigError(str(exc)) from exc
    scenarios = tuple(parse_scenario(s) for s in exp.get("scenarios", "clean").split(";") if s.strip())
    out_dir = Path(exp.get("out_dir", "runs").strip())
    if not out_dir.is_absolute():
        out_dir = Path(base_dir) / out_dir
    return ExperimentConfig(
        experiment_id=exp.get("id", "experiment").strip(), spec=spec, ugan=ugan, train=train,
        fractions=_parse_value(exp.get("fractions", "0.01"), "floats", "fractions"),
        scenarios=scenarios,
        seeds=_parse_value(exp.get("seeds", "0"), "ints", "seeds"),
        pool_size=_parse_value(exp.get("pool_size", "10000"), int, "pool_size"),
        out_dir=str(out_dir),
        workers=_parse_value(exp.get("workers", "1"), int, "workers"),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    return parse_config_text(path.read_text(), base_dir=path.parent)


def with_overrides(cfg: ExperimentConfig, **train_overrides) -> ExperimentConfig:
    """Replace TrainConfig fields; ``None`` values are ignored except for the cap."""
    kw = {k: v for k, v in train_overrides.items() if v is not None or k == "lipschitz_cap"}
    try:
        return replace(cfg, train=replace(cfg.train, **kw))
    except (TypeError, UsageError) as exc:
        raise ConfigError(str(exc)) from exc


# --------------------------------------------------------------------------
# Generators on disk
# --------------------------------------------------------------------------


def save_generator(path, g) -> None:
    if isinstance(g, OracleGenerator):
        save_checkpoint(path, {}, {"kind": "oracle-generator", "spec": g.transport.spec.to_dict(),
                                   "latent_dim": g.latent_dim})
    else:
        g.save(path)


def load_generator(path):
    _, meta = load_checkpoint(path)
    if meta.get("kind") == "oracle-generator":
        return OracleGenerator(GaussianMixtureSpec.from_dict(meta["spec"]), meta["latent_dim"])
    return MlpGenerator.load(path)


def build_generator(cfg: ExperimentConfig, seed: int):
    """Oracle sampler, or an MLP trained on an unlabeled pool drawn for ``seed``."""
    if cfg.ugan.mode == "oracle":
        return pretrain_ugan(cfg.spec, cfg.ugan)
    pool = sample_mixture(cfg.spec, cfg.ugan.num_data, child_seed(seed, "ugan-pool"))
    return pretrain_ugan(pool.x, replace(cfg.ugan, seed=child_seed(seed, "ugan")))


# --------------------------------------------------------------------------
# Running cells
# --------------------------------------------------------------------------


def cell_data(cfg: ExperimentConfig, cell: Cell) -> tuple[LabeledDataset, LabeledDataset]:
    """(labeled training set after the scenario, held-out real evaluation set)."""
    pool = sample_mixture(cfg.spec, cfg.pool_size, child_seed(cell.seed, "pool"))
    labeled = select_labeled(pool, cell.fraction, child_seed(cell.seed, "labels", cell.fraction))
    labeled = make_scenario(labeled, cell.scenario, child_seed(cell.seed, "scenario"))
    real = sample_mixture(cfg.spec, cfg.train.eval_real, child_seed(cell.seed, "eval-real"))
    return labeled, real


def run_cell(cfg: ExperimentConfig, cell: Cell, g=None, out_dir: str | Path | None = None,
             log: Callable[[str], None] | None = None) -> RunReport:
    """Train one cell; persists config snapshot, report, final CSV and modifier if ``out_dir`` is set."""
    g = g if g is not None else build_generator(cfg, cell.seed)
    labeled, real = cell_data(cfg, cell)
    train = replace(cfg.train, seed=cell.seed, labeled_fraction=cell.fraction, scenario=cell.scenario)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        snap = {"experiment": cfg.to_dict(), "cell": {"fraction": cell.fraction,
                                                      "scenario": format_scenario(cell.scenario),
                                                      "seed": cell.seed}}
        (out / "config.json").write_text(json.dumps(snap, sort_keys=True, indent=1))
    m, _, report = train_inrep(g, labeled, train, cfg.spec, eval_real=real, log=log)
    if out_dir is not None:
        report.save(out / "report.json")
        (out / "final.csv").write_text(report.final_csv())
        save_modifier(out / "modifier.json", m)
    return report


def rerun_from_snapshot(path: str | Path, out_dir: str | Path | None = None) -> RunReport:
    """Reproduce a cell from the ``config.json`` written next to its report."""
    snap = json.loads(Path(path).read_text())
    cfg = ExperimentConfig.from_dict(snap["experiment"])
    c = snap["cell"]
    return run_cell(cfg, Cell(c["fraction"], parse_scenario(c["scenario"]), c["seed"]), out_dir=out_dir)


def _cell_job(args) -> tuple[str, dict | None, str]:
    cfg_dict, cell_dict, cell_dir, gen_path = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    cell = Cell(cell_dict["fraction"], parse_scenario(cell_dict["scenario"]), cell_dict["seed"])
    try:
        report = run_cell(cfg, cell, load_generator(gen_path), cell_dir)
        return cell.name, report.to_dict(), ""
    except Exception as exc:  # recorded per cell; the aggregate flags the gap
        Path(cell_dir).mkdir(parents=True, exist_ok=True)
        err = "".join(traceback.format_exception_only(type(exc), exc)).strip()
        Path(cell_dir, "error.txt").write_text(err + "\n")
        return cell.name, None, err


@dataclass
class MatrixResult:
    cells: list[Cell]
    reports: list[RunReport | None]
    errors: list[str]
    aggregate_csv: Path


def run_matrix(cfg: ExperimentConfig, log: Callable[[str], None] | None = None) -> MatrixResult:
    """Run every (fraction, scenario, seed) cell and write ``aggregate.csv``.

    Generators are built once per seed and stored under ``ugan/``. Cells run in
    a process pool when ``cfg.workers > 1``; results are reduced in sorted
    cell order either way, so the aggregate does not depend on scheduling.
    """
    root = Path(cfg.out_dir)
    root.mkdir(parents=True, exist_ok=True)
    (root / "experiment.json").write_text(json.dumps(cfg.to_dict(), sort_keys=True, indent=1))
    gen_paths = {}
    for seed in cfg.seeds:
        gen_paths[seed] = root / "ugan" / f"seed{seed}.json"
        gen_paths[seed].parent.mkdir(exist_ok=True)
        if not gen_paths[seed].exists():
            save_generator(gen_paths[seed], build_generator(cfg, seed))
    cells = cfg.cells()
    jobs = [(cfg.to_dict(), {"fraction": c.fraction, "scenario": format_scenario(c.scenario), "seed": c.seed},
             str(root / "cells" / c.name), str(gen_paths[c.seed])) for c in cells]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            outcomes = list(pool.map(_cell_job, jobs))
    else:
        outcomes = []
        for job in jobs:
            outcomes.append(_cell_job(job))
            if log is not None:
                log(f"{outcomes[-1][0]}: {'ok' if outcomes[-1][1] else 'FAILED ' + outcomes[-1][2]}")
    reports = [RunReport(**d) if d is not None else None for _, d, _ in outcomes]
    errors = [e for _, _, e in outcomes]
    path = root / "aggregate.csv"
    path.write_text(aggregate_csv(cells, reports))
    return MatrixResult(cells, reports, errors, path)


def _summary(report: RunReport) -> dict[str, float]:
    m = report.final
    w2 = np.array(m.per_class_w2, dtype=np.float64)
    return {
        "overall_w2": m.overall_w2,
        "mean_class_w2": float(np.nanmean(w2)) if np.any(np.isfinite(w2)) else math.nan,
        "max_class_w2": float(np.nanmax(w2)) if np.any(np.isfinite(w2)) else math.nan,
        "recall": m.recall,
        "conditional_accuracy": m.conditional_accuracy,
        "cas_lite": m.cas_lite,
    }


def aggregate_csv(cells: list[Cell], reports: list[RunReport | None]) -> str:
    """One row per (fraction, scenario): mean and sample std across seeds.

    Columns: fraction, scenario, n_ok, n_failed, then ``<metric>_mean`` and
    ``<metric>_std`` for each metric in :data:`AGGREGATE_METRICS`, then
    ``gap`` (1 when any seed failed or produced no snapshot).
    """
    groups: dict[tuple, list] = {}
    for cell, rep in zip(cells, reports):
        groups.setdefault((cell.fraction, format_scenario(cell.scenario)), []).append(rep)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fraction", "scenario", "n_ok", "n_failed"]
               + [f"{m}_{s}" for m in AGGREGATE_METRICS for s in ("mean", "std")] + ["gap"])
    for (frac, scen), reps in sorted(groups.items()):
        ok = [_summary(r) for r in reps if r is not None and r.final is not None]
        row = [f"{frac:g}", scen, len(ok), len(reps) - len(ok)]
        for m in AGGREGATE_METRICS:
            vals = np.array([s[m] for s in ok], dtype=np.float64)
            vals = vals[np.isfinite(vals)]
            mean = f"{vals.mean():.6f}" if len(vals) else "nan"
            std = f"{vals.std(ddof=1):.6f}" if len(vals) > 1 else ("0.000000" if len(vals) == 1 else "nan")
            row += [mean, std]
        row.append(int(len(ok) < len(reps)))
        w.writerow(row)
    return buf.getvalue()


def read_aggregate(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def load_matrix(root: str | Path) -> tuple[ExperimentConfig, list[Cell], list[RunReport | None]]:
    root = Path(root)
    cfg = ExperimentConfig.from_dict(json.loads((root / "experiment.json").read_text()))
    cells = cfg.cells()
    reports = []
    for c in cells:
        p = root / "cells" / c.name / "report.json"
        reports.append(RunReport.load(p) if p.exists() else None)
    return cfg, cells, reports


# --------------------------------------------------------------------------
# Figures
# --------------------------------------------------------------------------


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # stable element ids so identical inputs give identical bytes
    plt.rcParams["svg.hashsalt"] = "inrep-lab"
    return plt


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    fig.clf()
    import matplotlib.pyplot as plt

    plt.close(fig)
    return path


CLASS_COLORS = ("tab:blue", "tab:orange", "tab:green", "tab:red", "tab:purple", "tab:brown", "tab:pink",
                "tab:gray", "tab:olive", "tab:cyan")


def scatter_overlay(path, real: np.ndarray, gen_x: np.ndarray, gen_y: np.ndarray, num_classes: int,
                    title: str = "") -> Path:
    """Real points in grey, generated points colored by class; absent classes are noted in the legend."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(real[:, 0], real[:, 1], s=2, c="0.75", label="real")
    for c in range(num_classes):
        sel = np.asarray(gen_y) == c
        color = CLASS_COLORS[c % len(CLASS_COLORS)]
        if sel.any():
            ax.scatter(gen_x[sel, 0], gen_x[sel, 1], s=2, color=color, label=f"class {c}")
        else:
            ax.scatter([], [], s=2, color=color, label=f"class {c} (absent)")
    ax.set_aspect("equal")
    ax.legend(loc="upper right", markerscale=4, fontsize=7)
    ax.set_title(title)
    return _save(fig, Path(path))


def landscape_contour(path, lambdas: np.ndarray, vs: np.ndarray, loss: Callable[[float, float], float]
                      ) -> tuple[Path, np.ndarray]:
    """Contour of loss(v, lam) with the per-lambda grid argmin marked; returns the marker v values."""
    plt = _pyplot()
    lambdas, vs = np.asarray(lambdas, dtype=np.float64), np.asarray(vs, dtype=np.float64)
    grid = np.array([[loss(v, lam) for v in vs] for lam in lambdas])
    marks = vs[np.argmin(grid, axis=1)]
    fig, ax = plt.subplots(figsize=(6, 4))
    cs = ax.contourf(vs, lambdas, grid, levels=30, cmap="viridis")
    fig.colorbar(cs, ax=ax, label="loss")
    ax.plot(marks, lambdas, "w^", markersize=4, label="grid argmin")
    ax.set_xlabel("v")
    ax.set_ylabel("lambda")
    ax.legend(loc="upper right", fontsize=7)
    return _save(fig, Path(path)), marks


def separable_contour(path, land, n_l: int = 120, n_alpha: int = 180) -> Path:
    """Contour of L(l, alpha) for the separable case with the bad critical point and optimum marked."""
    from .landscape import separable_total

    plt = _pyplot()
    ls = np.linspace(-0.9, 1.0, n_l)
    alphas = np.linspace(0.0, 2.0 * np.pi, n_alpha, endpoint=False)
    grid = np.array([[separable_total(land, l, a) for l in ls] for a in alphas])
    l0, a0 = land.bad_critical_point()
    fig, ax = plt.subplots(figsize=(6, 4))
    cs = ax.contourf(ls, alphas / np.pi, grid, levels=30, cmap="viridis")
    fig.colorbar(cs, ax=ax, label="loss")
    ax.plot([l0], [a0 / np.pi], "rx", label="bad critical point")
    ax.plot([1.0], [0.5], "w*", label="global minimum")
    ax.set_xlabel("l")
    ax.set_ylabel("alpha / pi")
    ax.legend(loc="upper left", fontsize=7)
    return _save(fig, Path(path))


def metric_vs_fraction(path, rows: list[dict[str, str]], metric: str = "conditional_accuracy") -> Path:
    """Line plot of an aggregate metric against labeled fraction, one line per scenario."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    for scen in sorted({r["scenario"] for r in rows}):
        sub = sorted((r for r in rows if r["scenario"] == scen), key=lambda r: float(r["fraction"]))
        x = [float(r["fraction"]) for r in sub]
        y = [float(r[f"{metric}_mean"]) for r in sub]
        e = [float(r[f"{metric}_std"]) for r in sub]
        ax.errorbar(x, y, yerr=e, marker="o", capsize=3, label=scen)
    ax.set_xscale("log")
    ax.set_xlabel("labeled fraction")
    ax.set_ylabel(metric)
    ax.legend(fontsize=7)
    return _save(fig, Path(path))


def emit_figures(root: str | Path, n_per_class: int = 500) -> list[Path]:
    """Scatter overlay per finished cell plus metric-vs-fraction plots for a matrix directory."""
    root = Path(root)
    cfg, cells, reports = load_matrix(root)
    if not any(r is not None for r in reports):
        raise UsageError(f"no finished runs under {root}")
    fig_dir = root / "figures"
    fig_dir.mkdir(exist_ok=True)
    out = []
    k = cfg.spec.num_classes
    for cell, rep in zip(cells, reports):
        mod_path = root / "cells" / cell.name / "modifier.json"
        if rep is None or not mod_path.exists():
            continue
        g = load_generator(root / "ugan" / f"seed{cell.seed}.json")
        m = load_modifier(mod_path)
        xs = [generate_conditional(g, m, c, n_per_class, child_seed(cell.seed, "figure", c)) for c in range(k)]
        real = sample_mixture(cfg.spec, n_per_class * k, child_seed(cell.seed, "figure", "real"))
        out.append(scatter_overlay(fig_dir / f"{cell.name}.svg", real.x, np.concatenate(xs),
                                   np.repeat(np.arange(k), n_per_class), k, cell.name))
    rows = read_aggregate(root / "aggregate.csv")
    for metric in ("conditional_accuracy", "mean_class_w2", "recall"):
        out.append(metric_vs_fraction(fig_dir / f"{metric}_vs_fraction.svg", rows, metric))
    return out
