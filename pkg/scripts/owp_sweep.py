"""T_SD of the 12-9 transition across the optimal working point."""

import argparse
import time

import numpy as np

from sibi.analysis import tsd_sweep
from sibi.lattice import LatticeSpec

FIELDS_MT = (170, 180, 183, 185, 187, 188, 193, 200, 250, 320)


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--side", type=float, default=80.0, help="lattice side in angstrom")
    p.add_argument("--n-configs", type=int, default=20)
    p.add_argument("--seed", type=int, default=3)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--B", type=float, nargs="+", default=FIELDS_MT, help="fields in mT")
    args = p.parse_args()

    t0 = time.perf_counter()
    res = tsd_sweep(LatticeSpec(side_length=args.side), (12, 9), np.asarray(args.B) * 1e-3,
                    n_configs=args.n_configs, seed=args.seed, workers=args.workers, keep_curves=False)
    print(f"{'B (mT)':>8} {'T_SD (ms)':>12} {'n':>6}")
    for B, fit in zip(args.B, res.fits):
        if fit is None:
            print(f"{B:8.1f} {'failed':>12}")
        elif fit.diverged:
            print(f"{B:8.1f} {'>' + format(fit.T_SD_lower_bound * 1e3, '.3g'):>12} {'-':>6}")
        else:
            print(f"{B:8.1f} {fit.T_SD * 1e3:12.3f} {fit.n_stretch:6.2f}")
    print(f"OWP {res.meta['B_owp_mT']:.2f} mT; monotone toward it: "
          f"{res.meta.get('monotone_left')}, {res.meta.get('monotone_right')}")
    print(f"{time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
