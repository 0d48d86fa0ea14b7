"""Print the auxiliary-classifier landscape tables and the separable-case escape runs."""

import math

import numpy as np

from inrep_lab.landscape import (AcganLandscape, SeparableLandscape, acgan_grid_minimizer, gd_minimize,
                                 separable_total)


def main():
    print("lambda   v*      GD from 0.5")
    for lam in (0, 1, 2, 5, 10, 50, 1000):
        land = AcganLandscape(lam)
        run = gd_minimize(land, np.array([0.5]), lr=1e-2, steps=5000)
        print(f"{lam:6g}  {acgan_grid_minimizer(land):.3f}  {run.final[0]:.4f}")

    sep = SeparableLandscape()
    l0, a0 = sep.bad_critical_point()
    print(f"\nseparable case, lambda={sep.lam}: bad point (l={l0}, alpha={a0 / math.pi:.5f} pi), "
          f"L={separable_total(sep, l0, a0):.6f}")
    for name, x0 in (("bad point", (l0, a0)), ("near optimum", (0.9, math.pi / 2))):
        run = gd_minimize(sep, np.array(x0), lr=1e-3, steps=10_000)
        moved = float(np.linalg.norm(run.final - np.array(x0)))
        print(f"GD from {name}: final l={run.final[0]:.4f} alpha={run.final[1] / math.pi:.4f} pi, "
              f"moved {moved:.4f}, L={run.losses[-1]:.6f}")


if __name__ == "__main__":
    main()
