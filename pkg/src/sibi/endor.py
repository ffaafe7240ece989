"""ENDOR line positions of 29Si neighbours of a mixed donor level.

Frequencies are in Hz, fields in tesla and omega0 in rad/s.  A level is
given either as a ``(sign, m)`` pair, a :class:`~sibi.spin.DoubletLevel` or
directly as its polarization <Sz>.
"""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import find_peaks

from .constants import SI_BI, TWO_PI, DonorSpec
from .spin import DoubletLevel, TransitionSpec, eigensystem, gamma_closed_form

log = logging.getLogger(__name__)

DEFAULT_SIGMA = 40e3
# fitted/nominal width above which a peak is treated as two unresolved lines
BLEND_RATIO = 1.1


# ------------------------------------------------------------------ types

@dataclass(frozen=True)
class ENDORLine:
    frequency: float
    level: tuple
    coupling_ref: str = ""
    intensity: float = 1.0

    def __post_init__(self):
        if not self.frequency >= 0:
            raise ValueError("ENDOR frequency must be non-negative")


@dataclass
class Spectrum:
    """Amplitude on a strictly increasing frequency grid (Hz).

    ``meta`` carries acquisition context such as ``B_mT``,
    ``mw_frequency_GHz``, ``orientation``, ``theta_deg`` or ``transition``.
    """

    freq_grid: np.ndarray
    amplitude: np.ndarray
    linewidth_sigma: float = DEFAULT_SIGMA
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.freq_grid = np.asarray(self.freq_grid, dtype=float)
        self.amplitude = np.asarray(self.amplitude, dtype=float)
        if self.freq_grid.ndim != 1 or self.freq_grid.shape != self.amplitude.shape:
            raise ValueError("grid and amplitude must be 1-D arrays of equal length")
        if len(self.freq_grid) > 1 and np.any(np.diff(self.freq_grid) <= 0):
            raise ValueError("frequency grid must be strictly increasing")
        if np.any(self.amplitude < 0):
            raise ValueError("spectrum amplitude must be non-negative")


@dataclass(frozen=True)
class CouplingEntry:
    a_iso: float
    T: float = 0.0
    is_anisotropic: bool = False
    label: str = ""
    confidence: str = "ok"

    def __post_init__(self):
        if self.a_iso < 0:
            raise ValueError("a_iso is stored non-negative; the sign sits in the branch choice")


@dataclass
class CouplingTable:
    entries: list = field(default_factory=list)

    @classmethod
    def isotropic(cls, a_values, labels=None):
        labels = labels or [f"c{k}" for k in range(len(a_values))]
        return cls([CouplingEntry(float(a), label=lab) for a, lab in zip(a_values, labels)])

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def a_iso(self) -> np.ndarray:
        return np.array([e.a_iso for e in self.entries], dtype=float)


COUPLING_CSV_FIELDS = ("label", "a_iso_MHz", "T_MHz", "is_anisotropic", "confidence")


def write_coupling_csv(path, table: CouplingTable):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COUPLING_CSV_FIELDS)
        for e in table:
            w.writerow([e.label, repr(e.a_iso / 1e6), repr(e.T / 1e6), int(e.is_anisotropic), e.confidence])


def read_coupling_csv(path) -> CouplingTable:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return CouplingTable([CouplingEntry(float(r["a_iso_MHz"]) * 1e6, float(r["T_MHz"]) * 1e6,
                                        bool(int(r["is_anisotropic"])), r["label"], r.get("confidence", "ok"))
                          for r in rows])


# ------------------------------------------------------------ frequencies

def effective_interaction(a_iso, T, theta):
    """Secular (alpha) and pseudo-secular (beta) parts of an axial SHF tensor."""
    T = np.asarray(T, dtype=float)
    alpha = (np.asarray(a_iso, dtype=float) - T) + 3.0 * T * np.cos(theta) ** 2
    beta = 3.0 * T * np.sin(theta) * np.cos(theta)
    return alpha, beta


def level_polarization(level, omega0, spec: DonorSpec = SI_BI) -> float:
    """<Sz> of a doublet level at ``omega0``."""
    if isinstance(level, DoubletLevel):
        level = (level.sign, level.m)
    if np.isscalar(level):
        return float(level)
    sign, m = level
    if sign not in (1, -1):
        raise ValueError("level sign must be +1 or -1")
    return 0.5 * sign * float(gamma_closed_form(spec, m, omega0))


def _partner(level):
    if isinstance(level, DoubletLevel):
        return (-level.sign, level.m)
    if np.isscalar(level):
        return -float(level)
    return (-level[0], level[1])


def endor_frequency_iso(level, omega0, a_iso, spec: DonorSpec = SI_BI):
    """ENDOR frequency (Hz) of an isotropically coupled 29Si for one donor level.

    ``a_iso`` is in Hz.  Vectorized over ``omega0`` and ``a_iso``.
    """
    s = level_polarization(level, omega0, spec) if not np.ndim(omega0) else \
        np.array([level_polarization(level, w, spec) for w in np.ravel(omega0)]).reshape(np.shape(omega0))
    nu_si = spec.delta_Si * np.asarray(omega0, dtype=float) / TWO_PI
    return np.abs(-nu_si + s * np.asarray(a_iso, dtype=float))


def endor_frequency_aniso(level, omega0, alpha, beta, spec: DonorSpec = SI_BI):
    """ENDOR frequencies (Hz) with a pseudo-secular term.

    Returns the line of ``level`` and that of its doublet partner (the
    opposite branch of the same m).  ``alpha`` and ``beta`` are in Hz.
    """
    nu_si = spec.delta_Si * np.asarray(omega0, dtype=float) / TWO_PI
    out = []
    for lev in (level, _partner(level)):
        s = level_polarization(lev, omega0, spec)
        out.append(np.hypot(-nu_si + s * np.asarray(alpha, float), s * np.asarray(beta, float)))
    return tuple(out)


def _transition_levels(spec, transition, B):
    """(label, sign, m, <Sz>) for the upper and lower level of a transition."""
    i, j = transition.levels if isinstance(transition, TransitionSpec) else transition
    es = eigensystem(spec, B)
    out = []
    for lab in (max(i, j), min(i, j)):
        k = es.index(lab)
        s = 0.5 * int(es.sign[k]) * float(es.gamma_closed[k])
        out.append((lab, int(es.sign[k]), int(es.m[k]), s))
    return out, es.omega0


def endor_lines(table: CouplingTable, transition, B, spec: DonorSpec = SI_BI, theta=None) -> list:
    """Two lines per coupling, one for each level of the EPR transition.

    ``theta`` (radians) sets the bond angle of anisotropic entries; without
    it anisotropic entries use their isotropic part.
    """
    levels, omega0 = _transition_levels(spec, transition, B)
    nu_si = spec.delta_Si * omega0 / TWO_PI
    lines = []
    for entry in table:
        if entry.T and theta is not None:
            alpha, beta = effective_interaction(entry.a_iso, entry.T, theta)
        else:
            alpha, beta = entry.a_iso, 0.0
        for lab, sign, m, s in levels:
            f = float(np.hypot(-nu_si + s * alpha, s * beta))
            lines.append(ENDORLine(f, (lab, sign, m), entry.label))
    return lines


def comb_width(table: CouplingTable, transition, B, spec: DonorSpec = SI_BI) -> float:
    """Spread (Hz) of all line positions of the table."""
    if len(table) == 0:
        return 0.0
    f = [ln.frequency for ln in endor_lines(table, transition, B, spec)]
    return float(max(f) - min(f))


def default_grid(centers, sigma, margin=8.0, floor=0.0):
    centers = np.atleast_1d(np.asarray(centers, dtype=float))
    lo = max(floor, centers.min() - margin * sigma)
    hi = centers.max() + margin * sigma
    step = sigma / 10.0
    return np.arange(lo, hi + step, step)


def gaussian_sum(grid, centers, amplitudes, sigma):
    """Sum of unit-area Gaussians scaled by ``amplitudes``."""
    grid = np.asarray(grid, dtype=float)[:, None]
    g = np.exp(-0.5 * ((grid - np.asarray(centers)[None, :]) / sigma) ** 2) / (sigma * np.sqrt(TWO_PI))
    return g @ np.asarray(amplitudes, dtype=float)


def synthesize_spectrum(table: CouplingTable, transition, B, sigma=DEFAULT_SIGMA, grid=None,
                        spec: DonorSpec = SI_BI, theta=None) -> Spectrum:
    """Gaussian comb at the ENDOR lines of ``table`` for one EPR transition."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    lines = endor_lines(table, transition, B, spec, theta)
    centers = np.array([ln.frequency for ln in lines])
    if grid is None:
        grid = default_grid(centers if len(centers) else [spec.si_zeeman_hz(B)], sigma)
    amp = gaussian_sum(grid, centers, np.ones(len(centers)), sigma) if len(centers) else np.zeros(len(grid))
    i, j = transition.levels if isinstance(transition, TransitionSpec) else transition
    return Spectrum(grid, np.maximum(amp, 0.0), sigma,
                    {"B_mT": B * 1e3, "transition": [int(i), int(j)]})


# -------------------------------------------------------------- peak fits

@dataclass(frozen=True)
class PeakFit:
    """Equal-width Gaussian decomposition of one spectrum."""

    centers: np.ndarray
    amplitudes: np.ndarray
    sigma: float
    center_errors: np.ndarray
    residual_rms: float
    overlapping: np.ndarray
    widths: np.ndarray = None


def _gauss_terms(f, c, sig):
    u = (f[:, None] - c[None, :]) / sig
    return u, np.exp(-0.5 * u**2) / (sig * np.sqrt(TWO_PI))


def _fit_equal_width(f, y, c0, a0, sigma0):
    k = len(c0)
    scale = y.max()

    def resid(p):
        return (gaussian_sum(f, p[:k], p[k:2 * k], p[-1]) - y) / scale

    def jac(p):
        c, a, sig = p[:k], p[k:2 * k], p[-1]
        u, g = _gauss_terms(f, c, sig)
        dsig = (g * a * (u**2 - 1) / sig).sum(axis=1, keepdims=True)
        return np.hstack([g * a * u / sig, g, dsig]) / scale

    p0 = np.concatenate([c0, a0, [sigma0]])
    lo = np.concatenate([c0 - 2 * sigma0, np.zeros(k), [0.1 * sigma0]])
    hi = np.concatenate([c0 + 2 * sigma0, np.full(k, np.inf), [10 * sigma0]])
    x_scale = np.concatenate([np.full(k, sigma0), np.maximum(a0, 1e-300), [sigma0]])
    return least_squares(resid, np.clip(p0, lo, hi), jac=jac, bounds=(lo, hi), x_scale=x_scale)


def _bic(res, n):
    rss = max(2 * res.cost, 1e-300)
    return n * np.log(rss / n) + len(res.x) * np.log(n)


def fit_peaks(spectrum: Spectrum, rel_height=0.1, sigma0=None, max_splits=None) -> PeakFit:
    """Least-squares fit of equal-width Gaussians with free centres and areas.

    Starting centres come from local maxima above ``rel_height`` of the
    spectrum maximum.  A peak whose individually refitted width exceeds the
    nominal line width by more than ``BLEND_RATIO`` is tried as two lines and
    the split is kept when it lowers the Bayesian information criterion.
    Peaks closer than 2 sigma, and broad peaks that could not be split, are
    flagged as overlapping.
    """
    f, y = spectrum.freq_grid, spectrum.amplitude
    if len(f) < 3 or y.max() <= 0:
        raise ValueError("spectrum has no resolvable peak")
    sigma0 = sigma0 or spectrum.linewidth_sigma
    step = float(np.median(np.diff(f)))
    idx, _ = find_peaks(y, height=rel_height * y.max(), prominence=rel_height * y.max(),
                        distance=max(1, int(0.8 * sigma0 / step)))
    if len(idx) == 0:
        idx = np.array([int(np.argmax(y))])
    c, a = f[idx], y[idx] * sigma0 * np.sqrt(TWO_PI)
    res = _fit_equal_width(f, y, c, a, sigma0)
    bic = _bic(res, len(f))
    max_splits = len(c) if max_splits is None else max_splits
    tried = set()
    for _ in range(max_splits):
        k = len(res.x) // 2
        c, a, sig = res.x[:k], res.x[k:2 * k], float(res.x[-1])
        widths = _peak_widths(f, y, c, a, sig)
        broad = [i for i in np.argsort(-widths) if widths[i] > BLEND_RATIO * spectrum.linewidth_sigma
                 and round(c[i], -2) not in tried]
        accepted = False
        for i in broad:
            tried.add(round(c[i], -2))
            half = np.sqrt(max(widths[i] ** 2 - sig ** 2, (0.3 * sig) ** 2))
            c_new = np.concatenate([np.delete(c, i), [c[i] - half, c[i] + half]])
            a_new = np.concatenate([np.delete(a, i), [a[i] / 2, a[i] / 2]])
            trial = _fit_equal_width(f, y, c_new, a_new, sig)
            if _bic(trial, len(f)) < bic - 10:
                res, bic, accepted = trial, _bic(trial, len(f)), True
                break
        if not accepted:
            break

    k = len(res.x) // 2
    centers, amps, sigma = res.x[:k], res.x[k:2 * k], float(res.x[-1])
    dof = max(1, len(f) - len(res.x))
    s2 = 2 * res.cost / dof
    try:
        cov = np.linalg.pinv(res.jac.T @ res.jac) * s2
        err = np.sqrt(np.clip(np.diag(cov)[:k], 0, None))
    except np.linalg.LinAlgError:
        err = np.full(k, np.nan)
    order = np.argsort(centers)
    centers, amps, err = centers[order], amps[order], err[order]
    gaps = np.diff(centers)
    close = np.zeros(k, bool)
    close[:-1] |= gaps < 2 * sigma
    close[1:] |= gaps < 2 * sigma
    widths = _peak_widths(f, y, centers, amps, sigma)
    close |= widths > BLEND_RATIO * spectrum.linewidth_sigma
    return PeakFit(centers, amps, sigma, err, float(np.sqrt(2 * res.cost / len(f))), close, widths)


def _peak_widths(f, y, centers, amps, sigma):
    """Refit with one width per peak, starting from the common-width solution."""
    k = len(centers)
    scale = y.max()

    def resid(p):
        _, g = _gauss_terms(f, p[:k], p[2 * k:])
        return (g @ p[k:2 * k] - y) / scale

    def jac(p):
        c, a, sig = p[:k], p[k:2 * k], p[2 * k:]
        u, g = _gauss_terms(f, c, sig)
        return np.hstack([g * a * u / sig, g, g * a * (u**2 - 1) / sig]) / scale

    p0 = np.concatenate([centers, amps, np.full(k, sigma)])
    lo = np.concatenate([centers - sigma, np.zeros(k), np.full(k, 0.1 * sigma)])
    hi = np.concatenate([centers + sigma, np.maximum(4 * amps, 1e-300), np.full(k, 10 * sigma)])
    p0 = np.clip(p0, lo, hi)
    res = least_squares(resid, p0, jac=jac, bounds=(lo, hi),
                        x_scale=np.concatenate([np.full(k, sigma), np.maximum(amps, 1e-300), np.full(k, sigma)]))
    return res.x[2 * k:]


# -------------------------------------------------------------- inversion

@dataclass(frozen=True)
class Measurement:
    """One spectrum with the transition and field it was recorded at."""

    spectrum: Spectrum
    transition: tuple
    B: float


def _as_measurements(measured, transition, B):
    if isinstance(measured, Spectrum):
        return [Measurement(measured, _levels_tuple(transition), float(B))]
    measured = list(measured)
    if measured and isinstance(measured[0], Measurement):
        return measured
    trs = transition if isinstance(transition, (list, tuple)) and len(transition) == len(measured) \
        and not np.isscalar(transition[0]) else [transition] * len(measured)
    Bs = np.broadcast_to(np.asarray(B, dtype=float), (len(measured),))
    return [Measurement(s, _levels_tuple(t), float(b)) for s, t, b in zip(measured, trs, Bs)]


def _levels_tuple(transition):
    if isinstance(transition, TransitionSpec):
        return transition.levels
    return tuple(int(x) for x in transition)


def _predict(a, s_levels, nu_si):
    return np.abs(-nu_si + np.asarray(s_levels)[:, None] * np.atleast_1d(a)[None, :])


def extract_couplings(measured, transition=None, B=None, spec: DonorSpec = SI_BI, tol_sigma=1.5,
                      rel_height=0.1) -> CouplingTable:
    """Isotropic couplings that explain the peaks of one or more spectra.

    Parameters
    ----------
    measured : Spectrum or sequence of Spectrum / Measurement
        Spectra at one or several fields (each may belong to a different
        EPR transition).
    transition, B
        Transition label pair and field (tesla), scalars or one per spectrum.

    Candidates ``a = (nu_Si +/- nu) / <Sz>`` are generated from every peak
    of the first spectrum and kept when every observable predicted line
    appears, within ``tol_sigma`` line widths, in every spectrum.  Survivors are refined by
    least squares over all matched peak centres.  With a single spectrum the
    pairing of peaks is not unique and entries are marked ``ambiguous``.
    Entries supported by fewer than two clean (non-overlapping) peaks are
    marked ``low-confidence``.
    """
    ms = _as_measurements(measured, transition, B)
    if not ms:
        raise ValueError("no spectra given")
    fits, ctx = [], []
    for m in ms:
        pf = fit_peaks(m.spectrum, rel_height=rel_height)
        levels, omega0 = _transition_levels(spec, m.transition, m.B)
        fits.append(pf)
        ctx.append((np.array([lv[3] for lv in levels]), spec.delta_Si * omega0 / TWO_PI))

    first, (s0, nu0) = fits[0], ctx[0]
    cands = []
    for nu in first.centers:
        for s in s0:
            if abs(s) < 1e-9:
                continue
            for sg in (1, -1):
                a = (nu0 + sg * nu) / s
                if a >= -tol_sigma * first.sigma / abs(s):
                    cands.append(max(a, 0.0))
    cands = np.unique(np.round(cands, 3))

    def match(a):
        """Matched centres per spectrum, or None when a line is missing."""
        matched, complete = [], False
        for pf, (s, nu_si), m in zip(fits, ctx, ms):
            pred = _predict(a, s, nu_si)[:, 0]
            # lines within 2 sigma of the grid edges cannot be observed
            f = m.spectrum.freq_grid
            seen = (pred > f[0] + 2 * pf.sigma) & (pred < f[-1] - 2 * pf.sigma)
            d = np.abs(pf.centers[None, :] - pred[seen, None])
            k = np.argmin(d, axis=1)
            if np.any(d[np.arange(len(k)), k] > tol_sigma * pf.sigma):
                return None
            complete |= bool(seen.all())
            matched.append((k, s[seen], nu_si, pf))
        # at least one spectrum must show both lines of the coupling
        return matched if complete else None

    accepted = []
    for a in cands:
        mt = match(a)
        if mt is None:
            continue
        a_ref = _refine(a, mt)
        if match(a_ref) is None:
            continue
        accepted.append((a_ref, mt))

    # merge duplicates produced from the two lines of the same coupling
    accepted.sort(key=lambda x: x[0])
    merged = []
    for a, mt in accepted:
        if merged and abs(a - merged[-1][0]) < 0.5 * fits[0].sigma / max(abs(s0).max(), 1e-9):
            continue
        merged.append((a, mt))

    single = len(ms) == 1
    entries = []
    for n, (a, mt) in enumerate(merged):
        n_clean = sum(int((~pf.overlapping[k]).sum()) for k, _, _, pf in mt)
        conf = "ambiguous" if single else ("low-confidence" if n_clean < 2 else "ok")
        entries.append(CouplingEntry(float(a), label=f"c{n}", confidence=conf))
    return CouplingTable(entries)


def _refine(a0, matched):
    """Least-squares coupling from matched centres, skipping blended peaks when possible."""
    obs, s_all, nu_all, clean = [], [], [], []
    for k, s, nu_si, pf in matched:
        obs.extend(pf.centers[k])
        s_all.extend(s)
        nu_all.extend([nu_si] * len(s))
        clean.extend(~pf.overlapping[k])
    obs, s_all, nu_all, clean = map(np.asarray, (obs, s_all, nu_all, clean))
    if clean.any():
        obs, s_all, nu_all = obs[clean], s_all[clean], nu_all[clean]
    res = least_squares(lambda p: np.abs(-nu_all + s_all * p[0]) - obs, [a0], bounds=([0.0], [np.inf]))
    return float(res.x[0])


def fit_anisotropic(thetas, frequencies, polarizations, nu_si, guess=(1e6, 1e6)):
    """Fit (a_iso, T) in Hz to lines observed at several bond angles.

    ``frequencies[k, l]`` is the line of level ``l`` (polarization
    ``polarizations[l]``) at angle ``thetas[k]``; NaN marks a missing line.
    Several starts guard against the sign ambiguity of the absolute value.
    """
    thetas = np.asarray(thetas, float)
    F = np.asarray(frequencies, float)
    s = np.asarray(polarizations, float)
    ok = np.isfinite(F)

    def resid(p):
        al, be = effective_interaction(p[0], p[1], thetas)
        pred = np.hypot(-nu_si + s[None, :] * al[:, None], s[None, :] * be[:, None])
        return (pred - F)[ok]

    best = None
    for a0, T0 in itertools.product((0.5, 1.0, 2.0), (-1.0, 0.5, 1.0, 2.0)):
        res = least_squares(resid, [a0 * guess[0], T0 * guess[1]], x_scale=[1e6, 1e6])
        if best is None or res.cost < best.cost:
            best = res
    return float(best.x[0]), float(best.x[1]), float(np.sqrt(2 * best.cost / ok.sum()))
