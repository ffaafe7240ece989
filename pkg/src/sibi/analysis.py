"""Decay fitting, optimal-working-point search, df/dB extrema and T_SD sweeps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, least_squares

from .cce import EchoCurve, default_tau_grid, ensemble_average
from .constants import SI_BI, TWO_PI, DonorSpec
from .lattice import DEFAULT_KL, KohnLuttinger, LatticeSpec
from .spin import (TransitionSpec, df_dB, eigensystem, gamma_closed_form, make_transition,
                   sx_matrix)

log = logging.getLogger(__name__)

NOISE_FLOOR = 0.02
DIVERGENCE_LEVEL = 0.9
TRUNCATION_LEVEL = 0.1
N_BOUNDS = (1.0, 4.0)
DIPOLE_THRESHOLD = 1e-3
SEARCH_RANGE = (1e-3, 1.0)
# free-rate fits with T_SD beyond this multiple of the fitted window are degenerate
DEGENERATE_SPAN = 10.0


# ---------------------------------------------------------------- decay fits

@dataclass(frozen=True)
class DecayFit:
    """Parameters of L(t) = exp(-t/T2 - (t/T_SD)^n).

    ``T2`` is ``inf`` when the linear term is not needed.  When the curve
    never falls below 0.9, ``diverged`` is set and ``T_SD_lower_bound`` holds
    t_max / sqrt(-ln 0.9) (n = 2 convention); the fitted fields are NaN.
    """

    T2: float
    T_SD: float
    n_stretch: float
    residual_rms: float
    diverged: bool = False
    T_SD_lower_bound: float = float("nan")
    n_points: int = 0
    message: str = ""

    @property
    def T_SD_effective(self) -> float:
        """T_SD, or its lower bound for a diverged curve."""
        return self.T_SD_lower_bound if self.diverged else self.T_SD


def stretched_decay(t, T2, T_SD, n):
    t = np.asarray(t, dtype=float)
    rate = 0.0 if not np.isfinite(T2) else 1.0 / T2
    return np.exp(-rate * t - (t / T_SD) ** n)


def divergence_bound(t_max):
    return float(t_max) / np.sqrt(-np.log(DIVERGENCE_LEVEL))


def _fit_log(t, y, with_rate, starts):
    def model(p):
        if with_rate:
            rate, logT, n = p
        else:
            rate, (logT, n) = 0.0, p
        return -rate * t - (t / np.exp(logT)) ** n

    best = None
    for T0, n0, r0 in starts:
        p0 = [r0, np.log(T0), n0] if with_rate else [np.log(T0), n0]
        lo = [0.0, -np.inf, N_BOUNDS[0]] if with_rate else [-np.inf, N_BOUNDS[0]]
        hi = [np.inf, np.inf, N_BOUNDS[1]] if with_rate else [np.inf, N_BOUNDS[1]]
        p0 = np.clip(p0, np.array(lo) + 1e-12 * (np.isfinite(lo)), hi)
        try:
            res = least_squares(lambda p: model(p) - y, p0, bounds=(lo, hi), method="trf",
                                x_scale="jac", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=4000)
        except (ValueError, FloatingPointError) as exc:
            log.debug("fit start %s failed: %s", p0, exc)
            continue
        if best is None or res.cost < best.cost:
            best = res
    return best


def fit_decay(curve, times=None) -> DecayFit:
    """Least-squares fit of ln L with uniform weights.

    Accepts an :class:`EchoCurve` or an array of L values with ``times``.
    Points with L < 0.02 are discarded, as is everything after the first
    point below 0.1 (where averaged curves settle onto a noise floor) or,
    failing that, after the minimum of the curve.  The fit with a free 1/T2 is
    compared with one at 1/T2 = 0 and the simpler model is kept unless the
    free rate lowers the rms residual by more than 20%.  A free-rate fit that
    hands the whole decay to 1/T2 (T_SD beyond ``DEGENERATE_SPAN`` times the
    fitted window) is also rejected.
    """
    if isinstance(curve, EchoCurve):
        t, L = np.asarray(curve.times, float), np.asarray(curve.L, float)
    else:
        t, L = np.asarray(times, float), np.asarray(curve, float)
    if len(t) == 0:
        return DecayFit(np.nan, np.nan, np.nan, np.nan, True, np.nan, 0, "empty curve")
    t_max = float(t.max())
    if len(t) < 10 or np.nanmin(L) >= DIVERGENCE_LEVEL:
        return DecayFit(np.nan, np.nan, np.nan, 0.0, True, divergence_bound(t_max), len(t),
                        "no decay below 0.9 within the grid")

    # past the first drop below 0.1 an ensemble curve only shows its noise floor;
    # a curve that never gets there is cut at its minimum (plateau or revival)
    low = np.flatnonzero(L < TRUNCATION_LEVEL)
    stop = low[0] if len(low) else int(np.nanargmin(L))
    t, L = t[:stop + 1], L[:stop + 1]
    keep = (t > 0) & np.isfinite(L) & (L > NOISE_FLOOR)
    tt, y = t[keep], np.log(np.minimum(L[keep], 1.0))
    if len(tt) < 3:
        return DecayFit(np.nan, np.nan, np.nan, np.nan, False, np.nan, len(tt), "too few points above noise floor")
    # starting time: where the curve crosses 1/e, or the last usable point
    below = np.flatnonzero(L[keep] < np.exp(-1))
    T0 = tt[below[0]] if len(below) else tt[-1]
    starts = [(T0 * f, n0, r0) for f in (0.7, 1.0, 1.5) for n0 in (1.5, 2.5, 3.5)
              for r0 in (0.0, 0.1 / T0)]
    full = _fit_log(tt, y, True, starts)
    restricted = _fit_log(tt, y, False, [(a, b, 0.0) for a, b, _ in starts])
    if full is None and restricted is None:
        return DecayFit(np.nan, np.nan, np.nan, np.nan, False, np.nan, len(tt), "fit failed")

    def rms(res):
        return np.sqrt(2 * res.cost / len(tt)) if res is not None else np.inf

    r_full, r_res = rms(full), rms(restricted)
    degenerate = full is None or np.exp(full.x[1]) > DEGENERATE_SPAN * tt[-1]
    if restricted is not None and (degenerate or r_res <= 1.2 * r_full):
        logT, n = restricted.x
        T2 = np.inf
        resid = r_res
        msg = "stretched exponential (1/T2 = 0)"
    else:
        rate, logT, n = full.x
        T2 = np.inf if rate <= 0 else 1.0 / rate
        resid = r_full
        msg = "stretched exponential with linear term"
    return DecayFit(float(T2), float(np.exp(logT)), float(n), float(resid), False, np.nan, len(tt), msg)


# ---------------------------------------------------------- working points

@dataclass(frozen=True)
class OWPReport:
    """Field where both transition levels carry the same <Sz>.

    ``gamma_values`` are the doublet mixing parameters (upper, lower) at
    ``B_owp``; ``polarization_gap`` is <Sz>_upper - <Sz>_lower there.
    """

    transition: TransitionSpec
    B_owp: float
    B_dfdb_zero: float
    gamma_values: tuple
    levels: tuple = ()
    polarization_gap: float = 0.0
    all_roots: tuple = ()


def _level_identity(spec, label, B):
    es = eigensystem(spec, B)
    k = es.index(label)
    return int(es.m[k]), int(es.sign[k]), float(es.omega0)


def _signed_gamma(spec, label, B):
    m, sgn, w0 = _level_identity(spec, label, B)
    return sgn * float(gamma_closed_form(spec, m, w0)), m, sgn


def polarization_gap(spec, upper, lower, B):
    """2(<Sz>_upper - <Sz>_lower) from the closed-form mixing parameters."""
    gu, _, _ = _signed_gamma(spec, upper, B)
    gl, _, _ = _signed_gamma(spec, lower, B)
    return gu - gl


def dfdb_condition(spec, upper, lower, B):
    """Zero exactly where d(E_upper - E_lower)/dB = 0."""
    gu, mu, _ = _signed_gamma(spec, upper, B)
    gl, ml, _ = _signed_gamma(spec, lower, B)
    d = spec.delta_Bi
    return gu - gl - 2 * d * (mu - ml) / (1 + d)


def _roots(fun, grid, tol=1e-12):
    vals = np.array([fun(b) for b in grid])
    roots = []
    for k in np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0):
        lo, hi = grid[k], grid[k + 1]
        flo = vals[k]
        # bisection: first to 1 uT, then on to machine-level resolution
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            fm = fun(mid)
            if fm == 0:
                lo = hi = mid
                break
            if np.sign(fm) == np.sign(flo):
                lo, flo = mid, fm
            else:
                hi = mid
        root = 0.5 * (lo + hi)
        # reject jumps caused by level relabelling (no true zero crossing)
        if abs(fun(root)) < 1e-6:
            roots.append(root)
    exact = [grid[k] for k in np.flatnonzero(vals == 0)]
    return sorted(roots + exact)


def find_owp(spec: DonorSpec = SI_BI, transition=(12, 9), B_range=SEARCH_RANGE, n_grid=400):
    """Locate the optimal working point of a transition.

    Returns ``None`` when the polarization gap does not change sign in
    ``B_range`` (e.g. transitions involving a stretched state).
    """
    upper, lower = transition.levels if isinstance(transition, TransitionSpec) else transition
    upper, lower = max(upper, lower), min(upper, lower)
    grid = np.linspace(B_range[0], B_range[1], n_grid)
    idents = [(_level_identity(spec, upper, b)[:2], _level_identity(spec, lower, b)[:2]) for b in grid[::20]]
    if all(abs(u[0]) >= spec.I + spec.S and abs(l[0]) >= spec.I + spec.S for u, l in idents):
        return None
    roots = _roots(lambda b: polarization_gap(spec, upper, lower, b), grid)
    if not roots:
        return None
    B_owp = roots[0]
    d_roots = _roots(lambda b: dfdb_condition(spec, upper, lower, b), grid)
    B_d = min(d_roots, key=lambda r: abs(r - B_owp)) if d_roots else float("nan")
    es = eigensystem(spec, B_owp)
    ku, kl = es.index(upper), es.index(lower)
    gam = (float(es.gamma_closed[ku]), float(es.gamma_closed[kl]))
    return OWPReport(
        transition=make_transition(spec, upper, lower, B_owp),
        B_owp=float(B_owp),
        B_dfdb_zero=float(B_d),
        gamma_values=gam,
        levels=((int(es.m[ku]), int(es.sign[ku])), (int(es.m[kl]), int(es.sign[kl]))),
        polarization_gap=float(0.5 * polarization_gap(spec, upper, lower, B_owp)),
        all_roots=tuple(float(r) for r in roots),
    )


def _field_grid(B_range, n):
    return np.geomspace(B_range[0], B_range[1], n)


def find_df_db_extrema(spec: DonorSpec = SI_BI, f_min: float = 0.0, f_max: float = np.inf,
                       B_range=SEARCH_RANGE, n_grid=1200):
    """All df/dB = 0 points of dipole-allowed transitions with f in [f_min, f_max] (Hz).

    A transition is dipole allowed when |<i|Sx|j>| exceeds 1e-3 at the
    extremum.  Results carry ``kind`` ('min'/'max') and the field.
    """
    if not f_min < f_max:
        raise ValueError("f_min must be below f_max")
    grid = _field_grid(B_range, n_grid)
    systems = [eigensystem(spec, b) for b in grid]
    E = np.array([es.energies for es in systems]) / TWO_PI
    ident = np.array([[(m, s) for m, s in zip(es.m, es.sign)] for es in systems])
    n = E.shape[1]
    found = []
    for i in range(n):
        for j in range(i):
            f = E[:, i] - E[:, j]
            if f.max() < f_min or f.min() > f_max:
                continue
            slope = np.diff(f) / np.diff(grid)
            for k in np.flatnonzero(np.sign(slope[:-1]) * np.sign(slope[1:]) < 0):
                lo, hi = grid[k], grid[k + 2]
                # same pair of doublet states across the bracket, else it is a relabelling kink
                if not (np.all(ident[k:k + 3, i] == ident[k, i]) and np.all(ident[k:k + 3, j] == ident[k, j])):
                    continue
                fun = lambda b: df_dB(spec, i + 1, j + 1, b)
                try:
                    root = brentq(fun, lo, hi, xtol=1e-10)
                except ValueError:
                    continue
                es = eigensystem(spec, root)
                if sx_matrix(spec, es)[i, j] <= DIPOLE_THRESHOLD:
                    continue
                freq = abs(es.energies[i] - es.energies[j]) / TWO_PI
                if not f_min <= freq <= f_max:
                    continue
                kind = "min" if slope[k] < 0 else "max"
                found.append(TransitionSpec(upper=i + 1, lower=j + 1, frequency=freq, dfdB=fun(root),
                                            field_B=float(root), kind=kind))
    return sorted(found, key=lambda t: (t.frequency, t.upper, t.lower))


def resonant_transitions(spec: DonorSpec = SI_BI, mw_frequency: float = 9.755e9, B_range=(0.05, 0.65),
                         n_grid=600):
    """Dipole-allowed transitions that hit ``mw_frequency`` (Hz), with their fields."""
    grid = np.linspace(B_range[0], B_range[1], n_grid)
    E = np.array([eigensystem(spec, b).energies for b in grid]) / TWO_PI
    out = []
    n = E.shape[1]
    for i in range(n):
        for j in range(i):
            g = E[:, i] - E[:, j] - mw_frequency
            for k in np.flatnonzero(np.sign(g[:-1]) * np.sign(g[1:]) < 0):
                fun = lambda b: transition_gap(spec, i + 1, j + 1, b) - mw_frequency
                try:
                    root = brentq(fun, grid[k], grid[k + 1], xtol=1e-10)
                except ValueError:
                    continue
                es = eigensystem(spec, root)
                if sx_matrix(spec, es)[i, j] > DIPOLE_THRESHOLD:
                    out.append(make_transition(spec, i + 1, j + 1, root))
    return sorted(out, key=lambda t: t.field_B)


def transition_gap(spec, i, j, B):
    es = eigensystem(spec, B)
    return abs(es.energies[es.index(i)] - es.energies[es.index(j)]) / TWO_PI


# ------------------------------------------------------------------ sweeps

T_MAX_LADDER = (4e-3, 4e-2, 4e-1, 4.0, 10.0)


@dataclass
class SweepResult:
    B_values: np.ndarray
    fits: list
    meta: dict = field(default_factory=dict)
    curves: list = field(default_factory=list)
    errors: dict = field(default_factory=dict)
    owp: OWPReport | None = None

    def __len__(self):
        return len(self.B_values)

    @property
    def T_SD_effective(self) -> np.ndarray:
        return np.array([f.T_SD_effective if f is not None else np.nan for f in self.fits])

    def monotone_toward_owp(self):
        """(left_ok, right_ok): effective T_SD rises as |B - B_owp| shrinks on each side."""
        if self.owp is None:
            return (None, None)
        B = np.asarray(self.B_values)
        T = self.T_SD_effective
        left = np.argsort(B[B <= self.owp.B_owp])
        right = np.argsort(B[B > self.owp.B_owp])
        tl = T[B <= self.owp.B_owp][left]
        tr = T[B > self.owp.B_owp][right]
        return bool(np.all(np.diff(tl) > 0)), bool(np.all(np.diff(tr) < 0))


def adaptive_echo(lattice_spec, transition, B, n_configs, seed=None, k_max=2, spec=SI_BI, kl=DEFAULT_KL,
                  n_points=60, t_max_ladder=T_MAX_LADDER, workers=1, average="intensity"):
    """Ensemble echo on a grid that is stretched until the decay is resolved.

    The echo-time cap grows through ``t_max_ladder`` until the curve drops below 0.1
    or passes through a minimum below 0.9 and recovers by 0.05;
    the last rung doubles as the divergence cap.
    """
    curve = None
    for t_max in t_max_ladder:
        curve = ensemble_average(lattice_spec, transition, B, default_tau_grid(t_max, n_points), n_configs,
                                 seed=seed, k_max=k_max, spec=spec, kl=kl, workers=workers, average=average)
        L = np.asarray(curve.L)
        turned = L.min() < DIVERGENCE_LEVEL and L[-1] > L.min() + 0.05
        if L.min() < TRUNCATION_LEVEL or turned:
            break
    return curve


def tsd_sweep(lattice_spec: LatticeSpec, transition, B_list, n_configs=20, seed=None, k_max=2,
              spec: DonorSpec = SI_BI, kl: KohnLuttinger = DEFAULT_KL, workers=1, t_max_ladder=T_MAX_LADDER,
              n_points=60, keep_curves=True) -> SweepResult:
    """Fitted T_SD at each field of ``B_list`` (tesla).

    Every field uses the same bath configurations (seed ``seed ^ i`` for
    configuration i), so differences between fields are not sampling noise.
    A failing field is recorded in ``errors`` and the sweep goes on.
    """
    B_list = np.atleast_1d(np.asarray(B_list, dtype=float))
    if B_list.size == 0:
        raise ValueError("B_list must be nonempty")
    seed = lattice_spec.seed if seed is None else int(seed)
    try:
        owp = find_owp(spec, transition)
    except Exception as exc:  # noqa: BLE001 - annotation only
        log.warning("OWP annotation failed: %s", exc)
        owp = None
    fits, curves, errors = [], [], {}
    for k, B in enumerate(B_list):
        try:
            curve = adaptive_echo(lattice_spec, transition, B, n_configs, seed=seed, k_max=k_max, spec=spec,
                                  kl=kl, n_points=n_points, t_max_ladder=t_max_ladder, workers=workers)
            fits.append(fit_decay(curve))
            curves.append(curve)
        except Exception as exc:  # noqa: BLE001 - per-field failures are recorded, sweep continues
            log.error("field %.4f T failed: %s", B, exc)
            errors[k] = f"{type(exc).__name__}: {exc}"
            fits.append(None)
            curves.append(None)
    i, j = transition.levels if isinstance(transition, TransitionSpec) else transition
    meta = {"transition": [int(i), int(j)], "n_configs": int(n_configs), "seed": seed, "k_max": int(k_max),
            "side_length_A": float(lattice_spec.side_length), "occupancy": float(lattice_spec.occupancy_p),
            "B_owp_mT": None if owp is None else owp.B_owp * 1e3}
    res = SweepResult(B_values=B_list, fits=fits, meta=meta, curves=curves if keep_curves else [],
                      errors=errors, owp=owp)
    if owp is not None:
        meta["monotone_left"], meta["monotone_right"] = res.monotone_toward_owp()
    return res
