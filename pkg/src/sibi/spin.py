"""Donor electron-nuclear spin Hamiltonian, mixed eigenstates and transitions.

The product basis is |m_S> (x) |m_I> with both projections in descending
order, so basis index ``k = iS * (2I+1) + iI``.  The Hamiltonian conserves
m = m_S + m_I, so each eigenstate lives in a doublet (or, for the two
stretched states |m| = I + S, a singlet) of constant m.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import TWO_PI, DonorSpec, SI_BI
from .linalg import jacobi_eigh


@dataclass(frozen=True)
class SpinOperators:
    dimension: int
    Jx: np.ndarray
    Jy: np.ndarray
    Jz: np.ndarray
    Jplus: np.ndarray
    Jminus: np.ndarray

    @property
    def projections(self) -> np.ndarray:
        return self.Jz.diagonal().real.copy()


def build_spin_matrices(J) -> SpinOperators:
    """Angular-momentum matrices for spin ``J`` in the Jz eigenbasis.

    Rows and columns run over m = J, J-1, ..., -J.
    """
    twice = 2 * float(J)
    if twice < 0 or abs(twice - round(twice)) > 1e-12:
        raise ValueError(f"spin must be a non-negative half-integer, got {J!r}")
    J = round(twice) / 2
    dim = int(round(twice)) + 1
    m = J - np.arange(dim)
    # <m+1|J+|m> = sqrt(J(J+1) - m(m+1)) sits on the first superdiagonal
    ladder = np.sqrt(J * (J + 1) - m[1:] * (m[1:] + 1))
    jp = np.diag(ladder, k=1).astype(complex)
    jm = jp.conj().T
    jx = 0.5 * (jp + jm)
    jy = -0.5j * (jp - jm)
    jz = np.diag(m).astype(complex)
    for arr in (jx, jy, jz, jp, jm):
        arr.setflags(write=False)
    return SpinOperators(dim, jx, jy, jz, jp, jm)


def donor_operators(spec: DonorSpec = SI_BI):
    """Electron and nuclear spin operators embedded in the product space."""
    s = build_spin_matrices(spec.S)
    i = build_spin_matrices(spec.I)
    eye_s = np.eye(s.dimension)
    eye_i = np.eye(i.dimension)
    S = [np.kron(op, eye_i) for op in (s.Jx, s.Jy, s.Jz)]
    I = [np.kron(eye_s, op) for op in (i.Jx, i.Jy, i.Jz)]
    return S, I


def build_donor_hamiltonian(spec: DonorSpec = SI_BI, B: float = 0.0) -> np.ndarray:
    """Hyperfine plus Zeeman Hamiltonian of the isolated donor (rad/s).

    H = A I.S + omega0 (Sz - delta_Bi Iz), field along z.
    """
    if B < 0:
        raise ValueError("field must be non-negative")
    S, I = donor_operators(spec)
    w0 = float(spec.omega0(B))
    H = spec.A * sum(s @ i for s, i in zip(S, I))
    H = H + w0 * (S[2] - spec.delta_Bi * I[2])
    return 0.5 * (H + H.conj().T)


def gamma_closed_form(spec: DonorSpec, m, omega0):
    """Doublet mixing parameter |a|^2 - |b|^2 from the analytic 2x2 solution.

    Defined as 1 for the two stretched singlets (|m| = I + S).
    """
    m = np.asarray(m, dtype=float)
    top = spec.I + spec.S
    omega = m + np.asarray(omega0, dtype=float) / spec.A * (1.0 + spec.delta_Bi)
    with np.errstate(invalid="ignore", divide="ignore"):
        g = omega / np.sqrt(omega**2 + top**2 - m**2)
    return np.where(np.abs(m) >= top - 1e-9, 1.0, g)


def doublet_omega(spec: DonorSpec, m, omega0):
    return np.asarray(m, dtype=float) + np.asarray(omega0, dtype=float) / spec.A * (1.0 + spec.delta_Bi)


@dataclass(frozen=True)
class DoubletLevel:
    label: int
    energy: float
    m: int
    sign: int
    Omega: float
    gamma: float
    a: complex
    b: complex

    @property
    def polarization(self) -> float:
        """<Sz> of the level, equal to sign * gamma / 2."""
        return 0.5 * self.sign * self.gamma

    @property
    def name(self) -> str:
        return f"|{'+' if self.sign > 0 else '-'},{self.m}>"


@dataclass(frozen=True)
class DonorEigensystem:
    """Eigenpairs of the donor Hamiltonian labelled 1..20 by ascending energy.

    Array index ``k`` corresponds to label ``k + 1``.  ``states[:, k]`` is the
    eigenvector, ``m[k]``/``sign[k]`` its doublet assignment, ``gamma[k]`` the
    numerically extracted |a|^2 - |b|^2 and ``gamma_closed[k]`` the analytic
    value.
    """

    field_B: float
    omega0: float
    energies: np.ndarray
    states: np.ndarray
    m: np.ndarray
    sign: np.ndarray
    Omega: np.ndarray
    gamma: np.ndarray
    gamma_closed: np.ndarray
    a: np.ndarray
    b: np.ndarray

    @property
    def labels(self) -> np.ndarray:
        return np.arange(1, len(self.energies) + 1)

    @property
    def polarization(self) -> np.ndarray:
        return 0.5 * self.sign * self.gamma

    def index(self, label: int) -> int:
        if not 1 <= label <= len(self.energies):
            raise ValueError(f"level label {label} out of range 1..{len(self.energies)}")
        return int(label) - 1

    def level(self, label: int) -> DoubletLevel:
        k = self.index(label)
        return DoubletLevel(
            label=int(label),
            energy=float(self.energies[k]),
            m=int(self.m[k]),
            sign=int(self.sign[k]),
            Omega=float(self.Omega[k]),
            gamma=float(self.gamma[k]),
            a=complex(self.a[k]),
            b=complex(self.b[k]),
        )

    def state(self, label: int) -> np.ndarray:
        return self.states[:, self.index(label)]


def _basis_quantum_numbers(spec: DonorSpec):
    ms = spec.S - np.arange(int(round(2 * spec.S)) + 1)
    mi = spec.I - np.arange(int(round(2 * spec.I)) + 1)
    MS, MI = np.meshgrid(ms, mi, indexing="ij")
    return MS.ravel(), MI.ravel()


def eigensystem(spec: DonorSpec = SI_BI, B: float = 0.0) -> DonorEigensystem:
    """Diagonalize the donor Hamiltonian block by block in constant m.

    Degenerate energies (e.g. the zero-field multiplets) are ordered by
    ascending m, then by sign with the lower branch first.
    """
    if spec.S != 0.5:
        raise NotImplementedError("doublet labelling assumes an electron spin 1/2")
    H = build_donor_hamiltonian(spec, B)
    dim = H.shape[0]
    ms, mi = _basis_quantum_numbers(spec)
    mtot = np.rint(ms + mi).astype(int)
    w0 = float(spec.omega0(B))

    energies, vecs, m_of, sign_of, a_of, b_of = [], [], [], [], [], []
    for m in np.unique(mtot):
        idx = np.flatnonzero(mtot == m)
        w, v = jacobi_eigh(H[np.ix_(idx, idx)])
        up = idx[ms[idx] > 0]
        dn = idx[ms[idx] < 0]
        for col, sgn in zip(range(len(idx)), _branch_signs(len(idx), ms[idx])):
            full = np.zeros(dim, dtype=complex)
            full[idx] = v[:, col]
            a_idx, b_idx = (up, dn) if sgn > 0 else (dn, up)
            a = full[a_idx[0]] if len(a_idx) else 0.0
            b = full[b_idx[0]] if len(b_idx) else 0.0
            # fix the global phase so that a is real and non-negative
            ref = a if abs(a) > 1e-14 else b
            if abs(ref) > 0:
                phase = np.conj(ref) / abs(ref)
                full *= phase
                a *= phase
                b *= phase
            energies.append(w[col])
            vecs.append(full)
            m_of.append(m)
            sign_of.append(sgn)
            a_of.append(a)
            b_of.append(b)

    energies = np.asarray(energies)
    m_of = np.asarray(m_of)
    sign_of = np.asarray(sign_of)
    order = _tie_broken_order(energies, m_of, sign_of, tol=1e-9 * max(np.abs(H).max(), spec.A))

    a_arr = np.asarray(a_of)[order]
    b_arr = np.asarray(b_of)[order]
    m_sorted = m_of[order]
    gamma = np.abs(a_arr) ** 2 - np.abs(b_arr) ** 2
    out = DonorEigensystem(
        field_B=float(B),
        omega0=w0,
        energies=energies[order],
        states=np.column_stack([vecs[k] for k in order]),
        m=m_sorted,
        sign=sign_of[order],
        Omega=doublet_omega(spec, m_sorted, w0),
        gamma=gamma,
        gamma_closed=gamma_closed_form(spec, m_sorted, w0),
        a=a_arr,
        b=b_arr,
    )
    for arr in (out.energies, out.states, out.m, out.sign, out.Omega, out.gamma,
                out.gamma_closed, out.a, out.b):
        arr.setflags(write=False)
    return out


def _branch_signs(size, ms_block):
    if size == 2:
        return (-1, +1)
    # stretched singlet: the branch is the sign of its electron projection
    return (int(np.sign(ms_block[0])),)


def _tie_broken_order(energies, m, sign, tol):
    order = sorted(range(len(energies)), key=lambda k: energies[k])
    out = []
    k = 0
    while k < len(order):
        group = [order[k]]
        while k + 1 < len(order) and energies[order[k + 1]] - energies[group[0]] <= tol:
            k += 1
            group.append(order[k])
        group.sort(key=lambda g: (m[g], sign[g]))
        out.extend(group)
        k += 1
    return np.asarray(out)


@dataclass(frozen=True)
class TransitionSpec:
    """A donor transition between two labelled levels.

    ``frequency`` in Hz and ``dfdB`` in Hz/T, both evaluated at ``field_B``.
    ``kind`` marks df/dB extrema ('min' or 'max') when the spec comes out of
    an extremum search.
    """

    upper: int
    lower: int
    frequency: float = float("nan")
    dfdB: float = float("nan")
    field_B: float = float("nan")
    kind: str | None = None

    def __post_init__(self):
        if self.upper == self.lower:
            raise ValueError("transition needs two distinct levels")
        if self.frequency < 0:
            raise ValueError("frequency must be non-negative")

    @property
    def levels(self) -> tuple[int, int]:
        return (self.upper, self.lower)


def transition_frequency(spec: DonorSpec, i: int, j: int, B: float, es: DonorEigensystem | None = None) -> float:
    """|E_i - E_j| / 2pi in Hz."""
    if i == j:
        raise ValueError("transition needs two distinct levels")
    if es is None:
        es = eigensystem(spec, B)
    return abs(es.energies[es.index(i)] - es.energies[es.index(j)]) / TWO_PI


def _central(spec, i, j, B, h):
    if B - h < 0:
        return (transition_frequency(spec, i, j, B + h) - transition_frequency(spec, i, j, B)) / h
    return (transition_frequency(spec, i, j, B + h) - transition_frequency(spec, i, j, B - h)) / (2 * h)


def df_dB(spec: DonorSpec, i: int, j: int, B: float, step: float = 1e-5) -> float:
    """Field derivative of a transition frequency (Hz/T).

    Central difference with step ``step``; if halving the step changes the
    estimate by more than 0.1 % the Richardson combination is returned.
    """
    d1 = _central(spec, i, j, B, step)
    d2 = _central(spec, i, j, B, step / 2)
    if abs(d1 - d2) <= 1e-3 * max(abs(d2), 1.0):
        return d2
    return (4 * d2 - d1) / 3


def sx_matrix_element(spec: DonorSpec, es: DonorEigensystem, i: int, j: int) -> float:
    S, _ = donor_operators(spec)
    return float(abs(es.state(i).conj() @ S[0] @ es.state(j)))


def sx_matrix(spec: DonorSpec, es: DonorEigensystem) -> np.ndarray:
    """|<k|Sx|l>| for all label pairs, as a 20x20 real array."""
    S, _ = donor_operators(spec)
    return np.abs(es.states.conj().T @ S[0] @ es.states)


def make_transition(spec: DonorSpec, i: int, j: int, B: float, kind=None) -> TransitionSpec:
    upper, lower = (i, j) if i > j else (j, i)
    return TransitionSpec(
        upper=upper,
        lower=lower,
        frequency=transition_frequency(spec, upper, lower, B),
        dfdB=df_dB(spec, upper, lower, B),
        field_B=float(B),
        kind=kind,
    )
