"""Optimal working point of the 12-9 transition and the df/dB census."""

import argparse

from sibi.analysis import find_df_db_extrema, find_owp, resonant_transitions


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--f-min", type=float, default=0.0, help="lower frequency bound in GHz")
    p.add_argument("--f-max", type=float, default=8.0, help="upper frequency bound in GHz")
    args = p.parse_args()

    owp = find_owp(transition=(12, 9))
    print(f"OWP  B = {owp.B_owp * 1e3:.4f} mT  df/dB = 0 at {owp.B_dfdb_zero * 1e3:.4f} mT"
          f"  gamma = {owp.gamma_values[0]:+.4f}, {owp.gamma_values[1]:+.4f}")
    print("\ndf/dB extrema")
    for t in find_df_db_extrema(f_min=args.f_min * 1e9, f_max=args.f_max * 1e9):
        print(f"  {t.upper:2d}-{t.lower:<2d} {t.kind:8s} {t.field_B * 1e3:8.2f} mT  {t.frequency / 1e9:.4f} GHz")
    res = resonant_transitions()
    print(f"\n{len(res)} transitions resonant at 9.755 GHz between 50 and 650 mT")


if __name__ == "__main__":
    main()
