"""Hahn-echo decay of a mixed donor transition via the cluster correlation expansion.

Two cluster solvers are provided:

* :func:`hahn_echo_exact` evolves donor (x) cluster with the full 20-level
  donor Hamiltonian and an ideal swap pulse on the two transition levels.
* :func:`pair_echo_fast` uses donor-conditioned bath Hamiltonians
  H_c = sum_n s_c (alpha_n Iz_n + beta_n Ix_n) - omega_Si sum_n Iz_n + H_dip,
  with s_c = <c|Sz|c>, valid when the bath cannot flip the donor.

Time arguments are the pulse delays tau (s); echoes are reported at t = 2 tau.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations

import numpy as np

from .constants import SI_BI, DonorSpec
from .endor import effective_interaction
from .lattice import (DEFAULT_KL, BathConfiguration, Cluster, KohnLuttinger, LatticeSpec,
                      cluster_pairs, connected_triples, sample_configuration)
from .spin import build_donor_hamiltonian, eigensystem

SMALL_FACTOR = 1e-12
MAX_EXACT_CLUSTER = 3


@lru_cache(maxsize=None)
def _bath_operators(n):
    """Iz, Ix of each spin and the flip-flop/Ising pair operators on 2**n states."""
    sz = np.diag([0.5, -0.5])
    sx = np.array([[0.0, 0.5], [0.5, 0.0]])
    sp = np.array([[0.0, 1.0], [0.0, 0.0]])

    def embed(op, k):
        mats = [np.eye(2)] * n
        mats[k] = op
        out = mats[0]
        for m in mats[1:]:
            out = np.kron(out, m)
        return out

    iz = np.array([embed(sz, k) for k in range(n)])
    ix = np.array([embed(sx, k) for k in range(n)])
    ip = np.array([embed(sp, k) for k in range(n)])
    return iz, ix, ip


def _pair_terms(n):
    iz, _, ip = _bath_operators(n)
    out = {}
    for a, b in combinations(range(n), 2):
        ising = iz[a] @ iz[b]
        ff = ip[a] @ ip[b].T + ip[a].T @ ip[b]
        out[(a, b)] = (ising, ff)
    return out


def _tau_grid(tau):
    tau = np.asarray(tau, dtype=float).ravel()
    if tau.size and (np.any(np.diff(tau) < 0) or tau[0] < 0):
        raise ValueError("tau grid must be non-negative and ascending")
    return tau


def _cluster_arrays(config: BathConfiguration, members):
    """alpha, beta and in-cluster pair couplings of one cluster."""
    members = tuple(members)
    alpha, beta = effective_interaction(config.a_iso[list(members)], config.T_aniso[list(members)],
                                        config.theta[list(members)])
    local = {m: k for k, m in enumerate(members)}
    dip = []
    pairs = np.asarray(config.pairs).reshape(-1, 2)
    if len(members) > 1 and len(pairs):
        mask = np.isin(pairs[:, 0], members) & np.isin(pairs[:, 1], members)
        for (i, j), bz, bf in zip(pairs[mask], config.b_zz[mask], config.b_ff[mask]):
            dip.append((local[int(i)], local[int(j)], float(bz), float(bf)))
    return alpha, beta, dip


def bath_hamiltonian(n, s, alpha, beta, omega_si, dip, zeeman_shift=0.0):
    """Conditional bath Hamiltonian for donor polarization ``s`` (rad/s)."""
    iz, ix, _ = _bath_operators(n)
    H = np.zeros((2**n, 2**n))
    for k in range(n):
        H += s * (alpha[k] * iz[k] + beta[k] * ix[k]) - (omega_si - zeeman_shift) * iz[k]
    terms = _pair_terms(n)
    for a, b, bz, bf in dip:
        ising, ff = terms[(min(a, b), max(a, b))]
        H += bz * ising + bf * ff
    return H


def _propagators(H, tau):
    """exp(-i H tau) for a stack of Hermitian H, shape (..., T, d, d)."""
    w, v = np.linalg.eigh(H)
    phase = np.exp(-1j * w[..., None, :] * tau[:, None])
    U = (v[..., None, :, :] * phase[..., :, None, :]) @ np.swapaxes(v.conj(), -1, -2)[..., None, :, :]
    # exact identity at tau = 0 rather than V V^dag
    U[..., tau == 0, :, :] = np.eye(H.shape[-1])
    return U


def _echo_from_conditionals(Hi, Hj, tau):
    """Tr[U_i^dag U_j^dag U_i U_j] / d for stacks of conditional Hamiltonians."""
    Ui = _propagators(Hi, tau)
    Uj = _propagators(Hj, tau)
    d = Hi.shape[-1]
    fwd = Ui @ Uj
    bwd = Uj @ Ui
    # Tr[(Uj Ui)^dag (Ui Uj)] = sum of elementwise conj(bwd) * fwd
    return np.einsum("...ab,...ab->...", bwd.conj(), fwd) / d


def transition_polarizations(spec: DonorSpec, transition, B):
    """<Sz> of the two transition levels at field B."""
    es = eigensystem(spec, B)
    i, j = _levels(transition)
    return float(es.polarization[es.index(i)]), float(es.polarization[es.index(j)])


def _levels(transition):
    if hasattr(transition, "levels"):
        return transition.levels
    i, j = transition
    return int(i), int(j)


def pair_echo_fast(cluster, config: BathConfiguration, transition, spec: DonorSpec = SI_BI, B: float = 0.0,
                   tau_grid=(), polarizations=None, zeeman_shift=0.0):
    """Pure-dephasing echo of one cluster (any size up to a few spins).

    ``polarizations`` overrides the level polarizations (s_i, s_j); otherwise
    they are taken from the donor eigensystem at ``B``.
    """
    tau = _tau_grid(tau_grid)
    members = tuple(cluster)
    s_i, s_j = polarizations if polarizations is not None else transition_polarizations(spec, transition, B)
    alpha, beta, dip = _cluster_arrays(config, members)
    omega_si = spec.delta_Si * float(spec.omega0(B))
    n = len(members)
    Hi = bath_hamiltonian(n, s_i, alpha, beta, omega_si, dip, zeeman_shift)
    Hj = bath_hamiltonian(n, s_j, alpha, beta, omega_si, dip, zeeman_shift)
    return _echo_from_conditionals(Hi, Hj, tau)


def hahn_echo_exact(cluster, config: BathConfiguration, transition, spec: DonorSpec = SI_BI, B: float = 0.0,
                    tau_grid=(), return_states=False):
    """Echo of one cluster from the full donor (x) bath evolution.

    The bath starts in each of the 2**n product states; the normalized
    off-diagonal donor element rho_ij(2 tau) / rho_ij(0) is averaged over
    them (complex average, i.e. a maximally mixed bath).
    """
    tau = _tau_grid(tau_grid)
    members = tuple(cluster)
    n = len(members)
    if n > MAX_EXACT_CLUSTER:
        raise ValueError(f"exact path limited to clusters of at most {MAX_EXACT_CLUSTER} spins")
    i, j = _levels(transition)
    es = eigensystem(spec, B)
    vi, vj = es.state(i), es.state(j)
    dd = es.states.shape[0]
    db = 2**n

    alpha, beta, dip = _cluster_arrays(config, members)
    omega_si = spec.delta_Si * float(spec.omega0(B))
    Hd = build_donor_hamiltonian(spec, B)
    Sz = np.kron(np.diag([0.5, -0.5]), np.eye(dd // 2))
    iz, ix, _ = _bath_operators(n)
    H = np.kron(Hd, np.eye(db))
    H = H + np.kron(np.eye(dd), bath_hamiltonian(n, 0.0, alpha, beta, omega_si, dip))
    for k in range(n):
        H = H + np.kron(Sz, alpha[k] * iz[k] + beta[k] * ix[k])

    # ideal pi pulse: swap |i> <-> |j>, identity on the other 18 levels
    P = np.eye(dd, dtype=complex) - np.outer(vi, vi.conj()) - np.outer(vj, vj.conj())
    X = P + np.outer(vi, vj.conj()) + np.outer(vj, vi.conj())
    Xf = np.kron(X, np.eye(db))

    U = _propagators(H, tau)  # (T, D, D)
    psi0_d = (vi + vj) / np.sqrt(2.0)
    out = np.zeros(len(tau), dtype=complex)
    Bi = np.kron(vi.conj(), np.eye(db))  # <i| (x) 1_B
    Bj = np.kron(vj.conj(), np.eye(db))
    for b in range(db):
        e_b = np.zeros(db)
        e_b[b] = 1.0
        psi0 = np.kron(psi0_d, e_b)
        psi = U @ (Xf @ (U @ psi0)[..., None])  # (T, D, 1)
        psi = psi[..., 0]
        ci = psi @ Bi.T  # bath vectors <i|psi>, shape (T, db)
        cj = psi @ Bj.T
        rho_ij = np.einsum("ta,ta->t", ci, cj.conj())
        out += rho_ij / 0.5
    return out / db


@dataclass
class ClusterContribution:
    cluster: Cluster
    L_S: np.ndarray
    Ltilde_S: np.ndarray


def cluster_factor(L_S, subset_factors, counter=None):
    """Irreducible factor L_S / prod(L~_C) over proper subsets C.

    Where the subset product has modulus below 1e-12 the factor is set to 1
    and ``counter['invalid']`` (if given) is incremented per time point.
    """
    L_S = np.asarray(L_S, dtype=complex)
    denom = np.ones_like(L_S)
    for f in subset_factors:
        denom = denom * f
    bad = np.abs(denom) < SMALL_FACTOR
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(bad, 1.0 + 0j, L_S / np.where(bad, 1.0, denom))
    if counter is not None:
        counter["invalid"] = counter.get("invalid", 0) + int(bad.sum())
    return out


def cce_combine(contributions, k_max=2, n_times=None):
    """Product of irreducible factors of clusters up to size ``k_max`` (complex)."""
    total = None
    for c in contributions:
        if len(c.cluster) <= k_max:
            total = c.Ltilde_S.copy() if total is None else total * c.Ltilde_S
    if total is None:
        return np.ones(n_times or 0, dtype=complex)
    return total


def _batched_fast(config, clusters, s_i, s_j, omega_si, tau, chunk=512):
    """Fast-path echoes for equal-size clusters, shape (len(clusters), T)."""
    if not len(clusters):
        return np.zeros((0, len(tau)), dtype=complex)
    n = len(clusters[0])
    clusters = np.asarray(clusters, dtype=int).reshape(-1, n)
    alpha, beta = effective_interaction(config.a_iso, config.T_aniso, config.theta)
    iz, ix, _ = _bath_operators(n)
    terms = _pair_terms(n)
    pair_lookup = {}
    for (i, j), bz, bf in zip(np.asarray(config.pairs).reshape(-1, 2), config.b_zz, config.b_ff):
        pair_lookup[(int(i), int(j))] = (bz, bf)

    base = np.zeros((len(clusters), 2**n, 2**n))
    for k in range(n):
        base -= omega_si * iz[k]
    for a, b in combinations(range(n), 2):
        ising, ff = terms[(a, b)]
        coup = np.array([pair_lookup.get((int(c[a]), int(c[b])), (0.0, 0.0)) for c in clusters])
        base += coup[:, 0, None, None] * ising + coup[:, 1, None, None] * ff
    site = np.zeros_like(base)
    for k in range(n):
        site += alpha[clusters[:, k], None, None] * iz[k] + beta[clusters[:, k], None, None] * ix[k]

    out = np.empty((len(clusters), len(tau)), dtype=complex)
    for lo in range(0, len(clusters), chunk):
        sl = slice(lo, lo + chunk)
        out[sl] = _echo_from_conditionals(base[sl] + s_i * site[sl], base[sl] + s_j * site[sl], tau)
    return out


def _batched_exact(config, clusters, transition, spec, B, tau):
    return np.array([hahn_echo_exact(c, config, transition, spec, B, tau) for c in clusters]).reshape(
        len(clusters), len(tau))


@dataclass
class CCEResult:
    L: np.ndarray
    invalid: int
    n_clusters: dict = field(default_factory=dict)


def cce_coherence(config: BathConfiguration, transition, spec: DonorSpec = SI_BI, B: float = 0.0, tau_grid=(),
                  k_max: int = 2, solver: str = "fast", r_max=None, polarizations=None,
                  keep_contributions: bool = False):
    """Complex CCE coherence L^(k)(2 tau) of one bath configuration.

    Irreducible factors are multiplied in sorted cluster order so the result
    does not depend on how the work was scheduled.
    """
    if k_max not in (1, 2, 3):
        raise ValueError("k_max must be 1, 2 or 3")
    tau = _tau_grid(tau_grid)
    nt = len(tau)
    n = len(config)
    counter = {"invalid": 0}
    if solver == "fast":
        s_i, s_j = polarizations if polarizations is not None else transition_polarizations(spec, transition, B)
        omega_si = spec.delta_Si * float(spec.omega0(B))
        solve = lambda cl: _batched_fast(config, cl, s_i, s_j, omega_si, tau)
    elif solver == "exact":
        solve = lambda cl: _batched_exact(config, cl, transition, spec, B, tau)
    else:
        raise ValueError(f"unknown solver {solver!r}")

    singles = [(k,) for k in range(n)]
    pairs = [tuple(map(int, p)) for p in cluster_pairs(config, r_max)] if k_max >= 2 else []
    triples = connected_triples(pairs, n) if k_max == 3 else []

    L1 = solve(singles) if singles else np.zeros((0, nt), complex)
    total = np.ones(nt, dtype=complex)
    contributions = []
    tilde = {}
    for c, row in zip(singles, L1):
        tilde[c] = row
    for c in singles:
        total = total * tilde[c]
    if pairs:
        L2 = solve(pairs)
        for c, row in zip(pairs, L2):
            tilde[c] = cluster_factor(row, [tilde[(c[0],)], tilde[(c[1],)]], counter)
            total = total * tilde[c]
    if triples:
        L3 = solve(triples)
        one = np.ones(nt, dtype=complex)
        for c, row in zip(triples, L3):
            subs = [tilde[(m,)] for m in c] + [tilde.get(p, one) for p in combinations(c, 2)]
            tilde[c] = cluster_factor(row, subs, counter)
            total = total * tilde[c]
    if keep_contributions:
        L_raw = {}
        for c, row in zip(singles, L1):
            L_raw[c] = row
        if pairs:
            L_raw.update({c: row for c, row in zip(pairs, L2)})
        if triples:
            L_raw.update({c: row for c, row in zip(triples, L3)})
        contributions = [ClusterContribution(Cluster(c), L_raw[c], tilde[c]) for c in sorted(tilde, key=lambda c: (len(c), c))]
    res = CCEResult(L=total, invalid=counter["invalid"],
                    n_clusters={1: len(singles), 2: len(pairs), 3: len(triples)})
    if keep_contributions:
        res.contributions = contributions
    return res


@dataclass(frozen=True)
class EchoCurve:
    """Ensemble Hahn-echo intensity on t = 2 tau."""

    times: np.ndarray
    L: np.ndarray
    meta: dict = field(default_factory=dict)
    per_config: np.ndarray | None = field(default=None, compare=False)

    @property
    def tau(self):
        return self.times / 2.0


def default_tau_grid(t_max=4e-3, n=60):
    """Zero followed by log-spaced echo times up to ``t_max``; returns tau = t/2."""
    t = np.concatenate([[0.0], np.geomspace(t_max * 1e-3, t_max, n - 1)])
    return t / 2.0


def _one_config(args):
    (lattice_spec, index, transition, spec, B, tau, k_max, solver, kl, pol) = args
    cfg = sample_configuration(lattice_spec, index, kl=kl, donor=spec)
    res = cce_coherence(cfg, transition, spec, B, tau, k_max=k_max, solver=solver, polarizations=pol)
    return res.L, res.invalid, len(cfg)


def ensemble_average(lattice_spec: LatticeSpec, transition, B: float, tau_grid=None, n_configs: int = 100,
                     seed: int | None = None, k_max: int = 2, spec: DonorSpec = SI_BI,
                     kl: KohnLuttinger = DEFAULT_KL, average: str = "intensity", workers: int = 1,
                     solver: str = "fast", keep_per_config: bool = False) -> EchoCurve:
    """Mean echo over ``n_configs`` random baths.

    Configuration ``i`` uses seed ``seed ^ i`` (``seed`` defaults to
    ``lattice_spec.seed``).  ``average='intensity'`` averages |L|;
    ``'amplitude'`` takes |mean L|.
    """
    if n_configs < 1:
        raise ValueError("n_configs must be at least 1")
    if average not in ("intensity", "amplitude"):
        raise ValueError("average must be 'intensity' or 'amplitude'")
    tau = default_tau_grid() if tau_grid is None else _tau_grid(tau_grid)
    if seed is not None:
        lattice_spec = LatticeSpec(**{**lattice_spec.__dict__, "seed": int(seed)})
    pol = transition_polarizations(spec, transition, B)
    jobs = [(lattice_spec, i, _levels(transition), spec, B, tau, k_max, solver, kl, pol) for i in range(n_configs)]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one_config, jobs))
    else:
        results = [_one_config(j) for j in jobs]
    per = np.array([r[0] for r in results]).reshape(n_configs, len(tau))
    if average == "intensity":
        L = np.mean(np.abs(per), axis=0)
    else:
        L = np.abs(np.mean(per, axis=0))
    i, j = _levels(transition)
    meta = {
        "transition": [int(i), int(j)], "B_mT": float(B) * 1e3, "k_max": int(k_max),
        "n_configs": int(n_configs), "seed": int(lattice_spec.seed),
        "side_length_A": float(lattice_spec.side_length), "occupancy": float(lattice_spec.occupancy_p),
        "invalid_divisions": int(sum(r[1] for r in results)), "average": average, "solver": solver,
        "mean_bath_size": float(np.mean([r[2] for r in results])),
    }
    return EchoCurve(times=2.0 * tau, L=L, meta=meta, per_config=per if keep_per_config else None)
