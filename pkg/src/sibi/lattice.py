"""Diamond-cubic 29Si bath: lattice generation, occupancy sampling, couplings.

Positions are in angstrom with the donor at the origin.  Couplings are
angular frequencies.  The external field direction defines the quantization
axis of the secular dipolar couplings and the angle theta of each site.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.spatial import cKDTree

from .constants import (ANGSTROM, EV, HBAR, MU0, NATURAL_SI29_ABUNDANCE,
                        SI_BI, SI_LATTICE_CONSTANT, TWO_PI, DonorSpec)

DIAMOND_BASIS = np.array([
    [0.0, 0.0, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0],
    [0.25, 0.25, 0.25], [0.25, 0.75, 0.75], [0.75, 0.25, 0.75], [0.75, 0.75, 0.25],
])


def neighbor_shell_distances(lattice_constant=SI_LATTICE_CONSTANT):
    """First three neighbour distances of the diamond lattice (angstrom)."""
    a = lattice_constant
    return np.array([np.sqrt(3) / 4 * a, a / np.sqrt(2), np.sqrt(11) / 4 * a])


def third_neighbor_cutoff(lattice_constant=SI_LATTICE_CONSTANT):
    # small margin so floating-point distances of the 3rd shell are kept
    return neighbor_shell_distances(lattice_constant)[2] * (1 + 1e-6)


@dataclass(frozen=True)
class LatticeSpec:
    side_length: float = 160.0
    lattice_constant: float = SI_LATTICE_CONSTANT
    occupancy_p: float = NATURAL_SI29_ABUNDANCE
    seed: int = 0
    field_direction: tuple = (0.0, 0.0, 1.0)
    pair_cutoff: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.occupancy_p <= 1.0:
            raise ValueError("occupancy_p must lie in [0, 1]")
        if not self.side_length > 0:
            raise ValueError("side_length must be positive")
        if not self.lattice_constant > 0:
            raise ValueError("lattice_constant must be positive")
        if np.linalg.norm(self.field_direction) == 0:
            raise ValueError("field_direction must be nonzero")

    @property
    def cutoff(self) -> float:
        if self.pair_cutoff is None:
            return third_neighbor_cutoff(self.lattice_constant)
        return float(self.pair_cutoff)

    @property
    def n_cells(self) -> int:
        return int(np.floor(self.side_length / self.lattice_constant + 1e-9))

    @property
    def unit_field(self) -> np.ndarray:
        n = np.asarray(self.field_direction, dtype=float)
        return n / np.linalg.norm(n)


def generate_lattice(spec: LatticeSpec) -> np.ndarray:
    """Candidate bath sites of a cube of ``n_cells**3`` conventional cells.

    The cube spans cells ``-(n//2) .. n - n//2 - 1`` along each axis so the
    donor sits on a lattice site at the origin; that site is removed, leaving
    ``8 n**3 - 1`` positions.
    """
    if spec.side_length < 2 * spec.lattice_constant:
        raise ValueError("side_length must be at least two lattice constants")
    return _lattice_positions(spec.n_cells, float(spec.lattice_constant)).copy()


@lru_cache(maxsize=8)
def _lattice_positions(n, a):
    r = np.arange(-(n // 2), n - n // 2)
    cells = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 1, 3)
    pos = ((cells + DIAMOND_BASIS[None]) * a).reshape(-1, 3)
    keep = np.any(np.abs(pos) > 1e-9 * a, axis=1)
    pos = pos[keep]
    pos.setflags(write=False)
    return pos


@dataclass(frozen=True)
class KohnLuttinger:
    """Six-valley effective-mass donor wavefunction with a contact prefactor.

    The envelope radii are the effective-mass values scaled by
    sqrt(E_effective_mass / E_ionization).  ``eta`` is the Bloch-function
    density enhancement at the 29Si nucleus.
    """

    ionization_energy_eV: float = 0.069
    effective_mass_energy_eV: float = 0.03127
    a_long: float = 25.09
    b_trans: float = 14.43
    k0_fraction: float = 0.85
    eta: float = 186.0
    lattice_constant: float = SI_LATTICE_CONSTANT

    @property
    def radii(self) -> tuple[float, float]:
        scale = np.sqrt(self.effective_mass_energy_eV / self.ionization_energy_eV)
        return self.a_long * scale, self.b_trans * scale

    @property
    def k0(self) -> float:
        return self.k0_fraction * TWO_PI / self.lattice_constant

    def contact_prefactor(self, donor: DonorSpec = SI_BI) -> float:
        """rad/s per angstrom^-3 of electron density."""
        return (2.0 * MU0 / 3.0) * donor.mu * (donor.delta_Si * donor.mu) * self.eta / HBAR / ANGSTROM**3

    def _envelopes(self, r):
        a, b = self.radii
        norm = 1.0 / np.sqrt(np.pi * a * b * b)
        sq = r**2
        env = []
        for axis in range(3):
            others = sq.sum(axis=-1) - sq[..., axis]
            env.append(norm * np.exp(-np.sqrt(sq[..., axis] / a**2 + others / b**2)))
        return np.stack(env, axis=-1)

    def density(self, r):
        """|Psi(r)|^2 in angstrom^-3; valleys along +-x, +-y, +-z."""
        r = np.asarray(r, dtype=float)
        env = self._envelopes(r)
        psi = (2.0 / np.sqrt(6.0)) * np.sum(env * np.cos(self.k0 * r), axis=-1)
        return psi**2

    def envelope_density(self, r):
        """Density with every valley interference factor set to one."""
        env = self._envelopes(np.asarray(r, dtype=float))
        return ((2.0 / np.sqrt(6.0)) * np.sum(env, axis=-1)) ** 2


DEFAULT_KL = KohnLuttinger()


def fermi_contact(position, kl: KohnLuttinger = DEFAULT_KL, donor: DonorSpec = SI_BI):
    """Isotropic superhyperfine coupling (rad/s) of a 29Si at ``position``.

    Accepts a single 3-vector or an (N, 3) array.  The sign of the 29Si
    moment is absorbed, so couplings are non-negative.
    """
    r = np.asarray(position, dtype=float)
    if np.any(np.linalg.norm(r.reshape(-1, 3), axis=1) == 0):
        raise ValueError("the donor site at the origin has no contact coupling")
    out = kl.contact_prefactor(donor) * kl.density(r)
    return float(out) if out.ndim == 0 else out


def dipolar_prefactor(donor: DonorSpec = SI_BI) -> float:
    """mu0 (delta_Si mu)^2 / (4 pi hbar) in rad/s * angstrom^3."""
    return MU0 / (4 * np.pi) * (donor.delta_Si * donor.mu) ** 2 / HBAR / ANGSTROM**3


@dataclass(frozen=True)
class DipolarTensor:
    D: np.ndarray
    r: np.ndarray


def dipolar_tensor(r, donor: DonorSpec = SI_BI) -> DipolarTensor:
    r = np.asarray(r, dtype=float)
    d = np.linalg.norm(r)
    if d == 0:
        raise ValueError("dipolar tensor undefined at zero separation")
    u = r / d
    D = dipolar_prefactor(donor) / d**3 * (np.eye(3) - 3 * np.outer(u, u))
    return DipolarTensor(D=D, r=r.copy())


def secular_pair_coupling(r, field_direction=(0.0, 0.0, 1.0), donor: DonorSpec = SI_BI):
    """Ising and flip-flop coefficients of the Iz-conserving dipolar part.

    Vectorized over a trailing axis of length 3.  Returns ``(b_zz, b_ff)``
    with the pair Hamiltonian b_zz I1z I2z + b_ff (I1+ I2- + I1- I2+).
    """
    r = np.asarray(r, dtype=float)
    d = np.linalg.norm(r, axis=-1)
    if np.any(d == 0):
        raise ValueError("dipolar coupling undefined at zero separation")
    n = np.asarray(field_direction, dtype=float)
    n = n / np.linalg.norm(n)
    cos = (r @ n) / d
    b_zz = dipolar_prefactor(donor) / d**3 * (1.0 - 3.0 * cos**2)
    return b_zz, -0.25 * b_zz


@dataclass(frozen=True)
class BathSite:
    index: int
    position: np.ndarray
    a_iso: float
    T_aniso: float
    theta: float


@dataclass(frozen=True)
class BathConfiguration:
    """Occupied 29Si sites and their couplings.

    Site data are stored column-wise; ``pairs`` holds (i, j) indices into the
    site arrays with i < j, separation at most ``cutoff``.
    """

    positions: np.ndarray
    a_iso: np.ndarray
    T_aniso: np.ndarray
    theta: np.ndarray
    lattice_index: np.ndarray
    pairs: np.ndarray
    b_zz: np.ndarray
    b_ff: np.ndarray
    cutoff: float
    field_direction: tuple = (0.0, 0.0, 1.0)
    seed: int | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return len(self.a_iso)

    @property
    def sites(self) -> list[BathSite]:
        return [BathSite(int(k), self.positions[k], float(self.a_iso[k]),
                         float(self.T_aniso[k]), float(self.theta[k]))
                for k in range(len(self))]

    def pair_list(self):
        return [(int(i), int(j), float(bz), float(bf))
                for (i, j), bz, bf in zip(self.pairs, self.b_zz, self.b_ff)]

    def subset(self, indices):
        """Configuration restricted to the given site indices (re-indexed)."""
        indices = np.asarray(sorted(indices), dtype=int)
        remap = -np.ones(len(self), dtype=int)
        remap[indices] = np.arange(len(indices))
        keep = np.all(remap[self.pairs] >= 0, axis=1) if len(self.pairs) else np.zeros(0, bool)
        return BathConfiguration(
            positions=self.positions[indices], a_iso=self.a_iso[indices],
            T_aniso=self.T_aniso[indices], theta=self.theta[indices],
            lattice_index=self.lattice_index[indices],
            pairs=remap[self.pairs[keep]].reshape(-1, 2), b_zz=self.b_zz[keep], b_ff=self.b_ff[keep],
            cutoff=self.cutoff, field_direction=self.field_direction, seed=self.seed,
        )


def bath_from_positions(positions, cutoff=None, field_direction=(0.0, 0.0, 1.0), a_iso=None,
                        T_aniso=None, kl: KohnLuttinger = DEFAULT_KL, donor: DonorSpec = SI_BI,
                        lattice_index=None, seed=None, theta=None) -> BathConfiguration:
    """Build a configuration from explicit positions.

    ``a_iso`` defaults to the Kohn-Luttinger contact coupling, ``T_aniso`` to
    zero.  Pairs are all site pairs within ``cutoff`` (3rd-neighbour distance
    by default).
    """
    pos = np.asarray(positions, dtype=float).reshape(-1, 3)
    n = len(pos)
    cutoff = third_neighbor_cutoff() if cutoff is None else float(cutoff)
    if a_iso is None:
        a_iso = fermi_contact(pos, kl, donor) if n else np.zeros(0)
    a_iso = np.asarray(a_iso, dtype=float).reshape(n)
    T = np.zeros(n) if T_aniso is None else np.asarray(T_aniso, dtype=float).reshape(n)
    u = np.asarray(field_direction, dtype=float)
    u = u / np.linalg.norm(u)
    d = np.linalg.norm(pos, axis=1)
    if theta is not None:
        theta = np.asarray(theta, dtype=float).reshape(n)
    elif n:
        with np.errstate(invalid="ignore", divide="ignore"):
            theta = np.arccos(np.clip(pos @ u / d, -1.0, 1.0))
    else:
        theta = np.zeros(0)
    if n > 1:
        pairs = cKDTree(pos).query_pairs(cutoff, output_type="ndarray")
        pairs = np.sort(pairs, axis=1)
        pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    else:
        pairs = np.zeros((0, 2), dtype=int)
    if len(pairs):
        b_zz, b_ff = secular_pair_coupling(pos[pairs[:, 1]] - pos[pairs[:, 0]], u, donor)
    else:
        b_zz = b_ff = np.zeros(0)
    if lattice_index is None:
        lattice_index = np.arange(n)
    out = BathConfiguration(
        positions=pos, a_iso=a_iso, T_aniso=T, theta=theta,
        lattice_index=np.asarray(lattice_index, dtype=int), pairs=pairs.astype(int),
        b_zz=np.asarray(b_zz, float), b_ff=np.asarray(b_ff, float),
        cutoff=cutoff, field_direction=tuple(float(x) for x in u), seed=seed,
    )
    for arr in (out.positions, out.a_iso, out.T_aniso, out.theta, out.lattice_index,
                out.pairs, out.b_zz, out.b_ff):
        arr.setflags(write=False)
    return out


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 stream for a 64-bit seed."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def config_seed(seed: int, index: int) -> int:
    """Seed of configuration ``index`` in an ensemble with master ``seed``."""
    return (int(seed) ^ int(index)) & 0xFFFFFFFFFFFFFFFF


def sample_bath(sites, p, seed, cutoff=None, field_direction=(0.0, 0.0, 1.0),
                kl: KohnLuttinger = DEFAULT_KL, donor: DonorSpec = SI_BI) -> BathConfiguration:
    """Occupy each candidate site independently with probability ``p``."""
    sites = np.asarray(sites, dtype=float).reshape(-1, 3)
    if not 0.0 <= p <= 1.0:
        raise ValueError("occupancy must lie in [0, 1]")
    occupied = make_rng(seed).random(len(sites)) < p
    idx = np.flatnonzero(occupied)
    return bath_from_positions(sites[idx], cutoff=cutoff, field_direction=field_direction,
                               kl=kl, donor=donor, lattice_index=idx, seed=int(seed))


def sample_configuration(spec: LatticeSpec, index: int = 0, kl: KohnLuttinger = DEFAULT_KL,
                         donor: DonorSpec = SI_BI) -> BathConfiguration:
    """Configuration ``index`` of the ensemble described by ``spec``."""
    sites = _lattice_positions(spec.n_cells, float(spec.lattice_constant))
    return sample_bath(sites, spec.occupancy_p, config_seed(spec.seed, index), cutoff=spec.cutoff,
                       field_direction=spec.unit_field, kl=kl, donor=donor)


@dataclass(frozen=True)
class Cluster:
    members: tuple

    def __post_init__(self):
        m = tuple(int(x) for x in self.members)
        if not m:
            raise ValueError("cluster must be nonempty")
        if len(set(m)) != len(m):
            raise ValueError("cluster members must be distinct")
        object.__setattr__(self, "members", tuple(sorted(m)))

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)


def enumerate_clusters(config: BathConfiguration, k_max: int = 2, r_max: float | None = None) -> list[Cluster]:
    """Singletons, pairs within ``r_max`` and (for k_max=3) connected triples.

    A triple is kept when its three spins are connected through pairs within
    ``r_max``.  Output order: by size, then lexicographic.
    """
    if k_max not in (1, 2, 3):
        raise ValueError("k_max must be 1, 2 or 3")
    n = len(config)
    out = [Cluster((i,)) for i in range(n)]
    if k_max == 1 or n < 2:
        return out
    pairs = cluster_pairs(config, r_max)
    out += [Cluster((int(i), int(j))) for i, j in pairs]
    if k_max == 3:
        out += [Cluster(t) for t in connected_triples(pairs, n)]
    return out


def cluster_pairs(config: BathConfiguration, r_max=None) -> np.ndarray:
    if r_max is None or r_max >= config.cutoff:
        if r_max is not None and r_max > config.cutoff * (1 + 1e-9):
            raise ValueError("r_max exceeds the cutoff used to build the configuration")
        return np.asarray(config.pairs, dtype=int).reshape(-1, 2)
    p = np.asarray(config.pairs, dtype=int).reshape(-1, 2)
    d = np.linalg.norm(config.positions[p[:, 1]] - config.positions[p[:, 0]], axis=1)
    return p[d <= r_max]


def connected_triples(pairs, n):
    nbrs = [set() for _ in range(n)]
    for i, j in pairs:
        nbrs[i].add(int(j))
        nbrs[j].add(int(i))
    triples = set()
    for i, j in pairs:
        for k in nbrs[i] | nbrs[j]:
            if k != i and k != j:
                triples.add(tuple(sorted((int(i), int(j), k))))
    return sorted(triples)


BATH_CSV_FIELDS = ("index", "x", "y", "z", "a_iso_Hz", "T_Hz", "theta_rad")


def write_bath_csv(path, config: BathConfiguration, header: dict | None = None):
    """Write one row per occupied site after '# key: value' header lines.

    Cutoff, field direction and seed are always recorded so that
    :func:`read_bath_csv` rebuilds the same configuration.
    """
    head = {"cutoff_A": repr(float(config.cutoff)),
            "field_direction": " ".join(repr(float(x)) for x in config.field_direction),
            "seed": config.seed}
    head.update(header or {})
    with open(path, "w", newline="") as fh:
        for key, val in head.items():
            fh.write(f"# {key}: {val}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BATH_CSV_FIELDS)
        for k in range(len(config)):
            x, y, z = config.positions[k]
            w.writerow([int(config.lattice_index[k]), repr(float(x)), repr(float(y)), repr(float(z)),
                        repr(float(config.a_iso[k] / TWO_PI)), repr(float(config.T_aniso[k] / TWO_PI)),
                        repr(float(config.theta[k]))])


def read_header(lines) -> dict:
    """'# key: value' lines at the top of a file as a dict of strings."""
    out = {}
    for ln in lines:
        if not ln.startswith("#"):
            break
        key, _, val = ln[1:].partition(":")
        out[key.strip()] = val.strip()
    return out


def read_bath_csv(path, cutoff=None, field_direction=None) -> BathConfiguration:
    """Inverse of :func:`write_bath_csv`; pairs are rebuilt from positions.

    Raises ValueError naming the file line of the first malformed row.
    """
    with open(path, newline="") as fh:
        lines = fh.readlines()
    head = read_header(lines)
    n_head = sum(1 for ln in lines if ln.startswith("#"))
    if cutoff is None and "cutoff_A" in head:
        cutoff = float(head["cutoff_A"])
    if field_direction is None:
        field_direction = tuple(float(x) for x in head.get("field_direction", "0 0 1").split())
    seed = head.get("seed")
    seed = int(seed) if seed not in (None, "", "None") else None
    reader = csv.DictReader([ln for ln in lines if not ln.startswith("#")])
    missing = set(BATH_CSV_FIELDS) - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    rows = []
    for lineno, row in enumerate(reader, start=n_head + 2):
        try:
            rows.append([float(row[k]) for k in BATH_CSV_FIELDS])
        except (TypeError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: bad value: {exc}") from None
    arr = np.asarray(rows, dtype=float).reshape(-1, 7)
    return bath_from_positions(arr[:, 1:4], cutoff=cutoff, field_direction=field_direction,
                               a_iso=arr[:, 4] * TWO_PI, T_aniso=arr[:, 5] * TWO_PI,
                               lattice_index=arr[:, 0].astype(int), seed=seed, theta=arr[:, 6])


__all__ = [
    "LatticeSpec", "BathSite", "BathConfiguration", "DipolarTensor", "Cluster", "KohnLuttinger",
    "generate_lattice", "sample_bath", "sample_configuration", "fermi_contact", "dipolar_tensor",
    "secular_pair_coupling", "enumerate_clusters", "neighbor_shell_distances", "write_bath_csv",
    "read_bath_csv", "read_header", "config_seed", "make_rng", "bath_from_positions",
]
