"""Bismuth donors in silicon: mixed-state ENDOR and 29Si spin-bath decoherence.

Modules
-------
constants  donor parameters and physical constants
spin       donor Hamiltonian, doublet eigensystem, transitions
lattice    diamond lattice, 29Si baths, couplings, clusters
endor      ENDOR line positions, spectrum synthesis, coupling extraction
cce        cluster correlation expansion of the Hahn echo
analysis   decay fits, working points, T_SD field sweeps
io         file formats
cli        command-line front end
"""

__version__ = "0.1.0"

from .constants import SI_BI, DonorSpec  # noqa: E402,F401
