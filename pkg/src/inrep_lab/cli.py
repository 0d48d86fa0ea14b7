"""Command line entry point ``inrep-lab``.

Exit codes: 0 on success, 2 on configuration or usage errors, 3 when a
numerical procedure aborts (non-finite loss, failed inversion).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .gradcore import UsageError
from .landscape import (AcganLandscape, DomainError, SeparableLandscape, acgan_grid_minimizer, acgan_loss,
                        gd_minimize, separable_total)
from .modifier import InversionError
from .puloss import DiscreteDist, bruteforce_equilibrium, equilibrium_value
from .trainer import TrainingAborted, generate_conditional, load_modifier

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _experiment(args):
    from .experiment import ExperimentConfig, load_config, with_overrides

    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if getattr(args, "iterations", None) is not None:
        overrides["iterations"] = args.iterations
    if getattr(args, "modifier_blocks", None) is not None:
        overrides["modifier_blocks"] = args.modifier_blocks
    if getattr(args, "lipschitz_cap", None) is not None:
        overrides["lipschitz_cap"] = None if args.lipschitz_cap.lower() == "none" else float(args.lipschitz_cap)
    if overrides:
        cfg = with_overrides(cfg, **overrides)
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    return cfg


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_landscape(args) -> int:
    """Grid minimizers, loss grids and GD trajectories for both classifier landscapes.

    Files: landscape.csv (lambda, v_star, loss), acgan_grid.csv (lambda, v, loss),
    acgan_trajectory.csv (lambda, step, v, loss), separable_trajectory.csv
    (start, step, l, alpha, loss), separable.json, and SVG figures unless
    --no-figure is given.
    """
    out = _out_dir(args)
    rows, grid_rows, traj_rows = [], [], []
    vs = np.arange(1, 201) * 1e-2
    for lam in args.lambdas:
        land = AcganLandscape(lam)
        v = acgan_grid_minimizer(land)
        rows.append((lam, v, acgan_loss(land, v)))
        grid_rows += [(f"{lam:g}", f"{x:g}", f"{y:.10g}") for x, y in zip(vs, acgan_loss(land, vs))]
        run = gd_minimize(land, np.array([0.5]), lr=1e-2, steps=args.gd_steps)
        traj_rows += [(f"{lam:g}", t, f"{p[0]:.10g}", f"{loss:.10g}")
                      for t, (p, loss) in enumerate(zip(run.params, run.losses))]
    _write_csv(out / "landscape.csv", ["lambda", "v_star", "loss"],
               [(f"{lam:g}", f"{v:.6f}", f"{loss:.10g}") for lam, v, loss in rows])
    _write_csv(out / "acgan_grid.csv", ["lambda", "v", "loss"], grid_rows)
    _write_csv(out / "acgan_trajectory.csv", ["lambda", "step", "v", "loss"], traj_rows)

    sep = SeparableLandscape()
    l0, a0 = sep.bad_critical_point()
    sep_rows = []
    for name, x0 in (("bad_point", (l0, a0)), ("near_optimum", (0.9, np.pi / 2))):
        run = gd_minimize(sep, np.array(x0), lr=1e-3, steps=args.gd_steps)
        sep_rows += [(name, t, f"{p[0]:.10g}", f"{p[1]:.10g}", f"{loss:.10g}")
                     for t, (p, loss) in enumerate(zip(run.params, run.losses))]
    _write_csv(out / "separable_trajectory.csv", ["start", "step", "l", "alpha", "loss"], sep_rows)
    summary = {"lambda": sep.lam, "d": sep.d, "bad_point": [l0, a0],
               "loss_at_bad_point": separable_total(sep, l0, a0),
               "loss_at_optimum": separable_total(sep, 1.0, np.pi / 2)}
    (out / "separable.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    if not args.no_figure:
        from .experiment import landscape_contour, separable_contour

        lams = np.linspace(0.0, max(args.lambdas), 41)
        landscape_contour(out / "landscape.svg", lams, vs, lambda v, lam: acgan_loss(AcganLandscape(lam), v))
        separable_contour(out / "separable.svg", sep)
    for lam, v, loss in rows:
        print(f"lambda={lam:g}  v*={v:.3f}  L={loss:.6f}")
    return EXIT_OK


def cmd_pu(args) -> int:
    """Analytic equilibrium value against a brute-force simplex search, written to pu.csv."""
    out = _out_dir(args)
    p = np.array(args.p_data, dtype=np.float64)
    p_data = DiscreteDist(tuple(range(len(p))), p / p.sum())
    rows = []
    for pi in args.pi:
        best, value = bruteforce_equilibrium(p_data, pi, args.grid)
        dist = float(np.max(np.abs(best.probs - p_data.probs)))
        rows.append((f"{pi:g}", f"{equilibrium_value(pi):.10g}", f"{value:.10g}", f"{dist:.6g}"))
    header = ["pi", "analytic_value", "search_value", "argmax_distance"]
    _write_csv(out / "pu.csv", header, rows)
    print(",".join(header))
    for r in rows:
        print(",".join(r))
    return EXIT_OK


def cmd_reprogram(args) -> int:
    from .reprogram import demo_1d

    out = _out_dir(args)
    seed = 0 if args.seed is None else args.seed
    res = demo_1d(n=args.n, bins=args.bins, y=args.y, seed=seed, hard=not args.soft)
    with open(out / "reprogram_hist.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "count", "expected"])
        for a, b, c, e in zip(res["edges"][:-1], res["edges"][1:], res["counts"], res["expected"]):
            w.writerow([f"{a:g}", f"{b:g}", int(c), f"{e:.6f}"])
    from .experiment import _pyplot, _save

    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    centers = 0.5 * (res["edges"][1:] + res["edges"][:-1])
    width = res["edges"][1] - res["edges"][0]
    ax.bar(centers, res["counts"], width=width, color="0.7", label="G(z_y) samples")
    ax.plot(centers, res["expected"], "r-", label="p(x | y) bin mass")
    ax.set_xlabel("x")
    ax.legend(fontsize=7)
    _save(fig, out / "reprogram_overlay.svg")
    print(f"tv={res['tv']:.5f}  chi2_p={res['pvalue']:.4f}  acceptance={res['acceptance_rate']:.4f}  "
          f"p(y)={res['prior']:.4f}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    from .experiment import build_generator, save_generator

    cfg = _experiment(args)
    out = _out_dir(args)
    g = build_generator(cfg, cfg.seeds[0])
    save_generator(out / "ugan.json", g)
    print(f"{cfg.ugan.mode} generator digest {g.digest()}")
    return EXIT_OK


def cmd_condition(args) -> int:
    from .experiment import Cell, load_generator, run_cell

    cfg = _experiment(args)
    g = load_generator(args.ugan) if args.ugan else None
    cell = Cell(cfg.fractions[0], cfg.scenarios[0], cfg.seeds[0])
    report = run_cell(cfg, cell, g, _out_dir(args), log=print)
    m = report.final
    print(f"accuracy={m.conditional_accuracy:.4f}  recall={m.recall:.4f}  "
          f"w2={np.round(m.per_class_w2, 4).tolist()}  ugan_unchanged={report.ugan_unchanged}")
    return EXIT_OK


def cmd_generate(args) -> int:
    from .experiment import load_generator

    g = load_generator(args.ugan)
    m = load_modifier(args.modifier)
    seed = 0 if args.seed is None else args.seed
    classes = range(m.cfg.num_classes) if args.y is None else [args.y]
    out = _out_dir(args)
    with open(out / "samples.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x1", "x2", "y"])
        for y in classes:
            for row in generate_conditional(g, m, y, args.n, seed + y):
                w.writerow([f"{row[0]:.8g}", f"{row[1]:.8g}", y])
    print(f"wrote {out / 'samples.csv'}")
    return EXIT_OK


def cmd_matrix(args) -> int:
    from .experiment import run_matrix

    cfg = _experiment(args)
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)
    res = run_matrix(cfg, log=print)
    print(res.aggregate_csv.read_text(), end="")
    return EXIT_OK


def cmd_report(args) -> int:
    from .experiment import emit_figures

    root = Path(args.run)
    if not (root / "experiment.json").exists():
        raise UsageError(f"{root} is not a matrix output directory")
    for p in emit_figures(root, args.n):
        print(p)
    print((root / "aggregate.csv").read_text(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="inrep-lab", description="Conditioning frozen generators on toy data.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default="out"):
        p.add_argument("--config", help="experiment config file (INI)")
        p.add_argument("--seed", type=int, help="root seed")
        p.add_argument("--out", default=out_default, help="output directory")
        return p

    p = common(sub.add_parser("landscape", help="loss landscapes of the auxiliary-classifier analyses"))
    p.add_argument("--lambdas", type=float, nargs="+", default=[0, 1, 2, 5, 10, 50, 1000])
    p.add_argument("--gd-steps", type=int, default=5000)
    p.add_argument("--no-figure", action="store_true")
    p.set_defaults(fn=cmd_landscape)

    p = common(sub.add_parser("pu", help="PU value equilibrium: analytic vs brute-force search"))
    p.add_argument("action", nargs="?", choices=["verify"], default="verify")
    p.add_argument("--pi", type=float, nargs="+", default=[0.0, 0.2, 0.5, 0.9])
    p.add_argument("--p-data", type=float, nargs="+", default=[0.5, 0.3, 0.2])
    p.add_argument("--grid", type=float, default=0.02)
    p.set_defaults(fn=cmd_pu)

    p = common(sub.add_parser("reprogram", help="noise reweighting demonstration"))
    p.add_argument("action", choices=["demo"])
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--y", type=int, default=0)
    p.add_argument("--soft", action="store_true", help="component posterior instead of a hard threshold")
    p.set_defaults(fn=cmd_reprogram)

    p = common(sub.add_parser("pretrain", help="build the unconditional generator"))
    p.set_defaults(fn=cmd_pretrain)

    for name, fn, helptext in (("condition", cmd_condition, "train a modifier for one cell"),
                               ("matrix", cmd_matrix, "run the fraction x scenario x seed matrix")):
        p = common(sub.add_parser(name, help=helptext), out_default=None if name == "matrix" else "out")
        p.add_argument("--iterations", type=int)
        p.add_argument("--modifier-blocks", type=int)
        p.add_argument("--lipschitz-cap", help="cap in (0, 1), or 'none' for unconstrained blocks")
        if name == "condition":
            p.add_argument("--ugan", help="generator checkpoint (default: build from config)")
        else:
            p.add_argument("--workers", type=int)
        p.set_defaults(fn=fn)

    p = common(sub.add_parser("generate", help="sample from a trained modifier"))
    p.add_argument("--ugan", required=True)
    p.add_argument("--modifier", required=True)
    p.add_argument("--y", type=int, help="class (default: all)")
    p.add_argument("--n", type=int, default=1000)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("report", help="figures and aggregate table for a matrix directory")
    p.add_argument("run")
    p.add_argument("--n", type=int, default=500, help="samples per class in scatter plots")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (TrainingAborted, InversionError, FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, DomainError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
