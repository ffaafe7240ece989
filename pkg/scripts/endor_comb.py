"""ENDOR comb of a coupling table across the resonant fields and its recovery from noisy spectra."""

import argparse

import numpy as np

from sibi.analysis import resonant_transitions
from sibi.endor import CouplingTable, comb_width, extract_couplings, synthesize_spectrum

COUPLINGS_MHZ = (0.35, 0.6, 1.1, 1.6, 2.2, 3.0, 3.9, 4.8, 6.1, 7.5, 9.2, 11.0)


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--noise", type=float, default=0.01, help="noise relative to the tallest peak")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    table = CouplingTable.isotropic(np.asarray(COUPLINGS_MHZ) * 1e6)
    rng = np.random.default_rng(args.seed)
    spectra, trs, fields = [], [], []
    print(f"{'B (mT)':>8} {'levels':>7} {'comb (MHz)':>11}")
    for t in resonant_transitions():
        width = comb_width(table, (t.upper, t.lower), t.field_B)
        print(f"{t.field_B * 1e3:8.1f} {t.upper:3d}-{t.lower:<3d} {width / 1e6:11.3f}")
        sp = synthesize_spectrum(table, (t.upper, t.lower), t.field_B)
        sp.amplitude = np.clip(sp.amplitude + rng.normal(0, args.noise * sp.amplitude.max(), sp.amplitude.size),
                               0, None)
        spectra.append(sp)
        trs.append((t.upper, t.lower))
        fields.append(t.field_B)
    owp_width = comb_width(table, (12, 9), 0.188)
    print(f"{188.0:8.1f} {'12-9':>7} {owp_width / 1e6:11.3f}  (optimal working point)")
    found = extract_couplings(spectra, trs, fields)
    print("\nrecovered couplings (MHz)")
    for true, e in zip(sorted(COUPLINGS_MHZ), sorted(found, key=lambda e: e.a_iso)):
        print(f"  {true:6.3f}  {e.a_iso / 1e6:8.4f}  {e.confidence}")


if __name__ == "__main__":
    main()
