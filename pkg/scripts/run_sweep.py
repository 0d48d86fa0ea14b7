"""Run an experiment config end to end and emit its figures.

    python3 scripts/run_sweep.py scripts/configs/fraction_sweep.ini
"""

import argparse

from inrep_lab.experiment import emit_figures, load_config, run_matrix


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config")
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()
    cfg = load_config(args.config)
    if args.workers:
        from dataclasses import replace

        cfg = replace(cfg, workers=args.workers)
    res = run_matrix(cfg, log=print)
    for path in emit_figures(cfg.out_dir):
        print(path)
    print(res.aggregate_csv.read_text(), end="")


if __name__ == "__main__":
    main()
