"""Physical constants and the Si:Bi donor parameter set.

Internal units: energies and couplings are angular frequencies (rad/s),
fields in tesla, lengths in angstrom unless a name says otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import constants as _c

HBAR = _c.hbar
MU0 = 4e-7 * np.pi
TWO_PI = 2.0 * np.pi
ANGSTROM = 1e-10
EV = _c.electron_volt

# standard silicon lattice constant (angstrom)
SI_LATTICE_CONSTANT = 5.431
NATURAL_SI29_ABUNDANCE = 0.0467


@dataclass(frozen=True)
class DonorSpec:
    """Spin quantum numbers and coupling constants of a substitutional donor.

    Defaults describe bismuth in silicon.
    """

    S: float = 0.5
    I: float = 4.5
    A: float = TWO_PI * 1.4754e9
    mu: float = 1.857e-23
    delta_Bi: float = 2.486e-4
    delta_Si: float = 3.021e-4

    def __post_init__(self):
        for name in ("A", "mu", "delta_Bi", "delta_Si"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        for name in ("S", "I"):
            twice = 2 * getattr(self, name)
            if twice <= 0 or abs(twice - round(twice)) > 1e-12:
                raise ValueError(f"{name} must be a positive half-integer")

    @property
    def dimension(self) -> int:
        return int(round((2 * self.S + 1) * (2 * self.I + 1)))

    def omega0(self, B):
        """Electronic Zeeman angular frequency mu*B/hbar."""
        return self.mu * np.asarray(B, dtype=float) / HBAR

    def field_from_omega0(self, omega0):
        return np.asarray(omega0, dtype=float) * HBAR / self.mu

    def si_zeeman_hz(self, B):
        """Bare 29Si Larmor frequency in Hz."""
        return self.delta_Si * self.omega0(B) / TWO_PI


SI_BI = DonorSpec()
