"""Noise reweighting on the 1D and 2D oracle generators."""

import numpy as np

from inrep_lab.mixture import default_spec
from inrep_lab.reprogram import GaussianNoiseOracle, demo_1d, mixture_posterior_2d, rejection_sample


def main():
    for hard in (True, False):
        res = demo_1d(hard=hard)
        kind = "threshold" if hard else "component"
        print(f"1D {kind} posterior: TV={res['tv']:.4f}  chi2 p={res['pvalue']:.3f}  "
              f"acceptance={res['acceptance_rate']:.4f} (p(y)={res['prior']:.2f})")
    spec = default_spec()
    g = GaussianNoiseOracle(spec)
    post = mixture_posterior_2d(spec)
    for y in range(spec.num_classes):
        res = rejection_sample(g, post, y, 20_000, seed=y)
        x = g(res.noise)
        print(f"2D class {y}: mean={np.round(x.mean(axis=0), 3)}  target={spec.means[y]}  "
              f"acceptance={res.acceptance_rate:.4f}")


if __name__ == "__main__":
    main()
