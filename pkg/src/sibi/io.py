"""Readers and writers for echo curves, sweeps, OWP reports and spectra.

Every CSV starts with '# key: value' lines (package version, seed and run
parameters) and has a JSON sidecar with the same metadata.  Floats are
written with ``repr`` so a write/read cycle is lossless and repeated runs
give byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import DecayFit, OWPReport, SweepResult
from .cce import EchoCurve
from .endor import Spectrum
from .spin import TransitionSpec


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def _unjson_float(x):
    return float(x) if isinstance(x, str) else x


def dump_json(path, obj):
    text = json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"
    Path(path).write_text(text)


def load_json(path):
    return json.loads(Path(path).read_text())


def sidecar(path) -> Path:
    return Path(path).with_suffix(".json")


def _header_lines(meta):
    out = [f"# version: {__version__}"]
    for key in sorted(set(meta) - {"version"}):
        out.append(f"# {key}: {json.dumps(_jsonable(meta[key]), sort_keys=True)}")
    return "\n".join(out) + "\n"


def _write_table(path, meta, columns, rows):
    with open(path, "w", newline="") as fh:
        fh.write(_header_lines(meta))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    dump_json(sidecar(path), {**meta, "version": __version__})


def _read_table(path, columns):
    with open(path, newline="") as fh:
        lines = fh.readlines()
    n_head = next((k for k, ln in enumerate(lines) if not ln.startswith("#")), len(lines))
    reader = csv.DictReader(lines[n_head:])
    missing = set(columns) - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    rows = []
    for lineno, row in enumerate(reader, start=n_head + 2):
        try:
            rows.append({c: row[c] for c in columns})
        except KeyError as exc:
            raise ValueError(f"{path}:{lineno}: missing field {exc}") from None
    return rows, n_head


def _floats(path, rows, cols, first_line):
    out = []
    for k, row in enumerate(rows):
        try:
            out.append([float(row[c]) for c in cols])
        except (TypeError, ValueError) as exc:
            raise ValueError(f"{path}:{first_line + k}: bad value: {exc}") from None
    return np.asarray(out, dtype=float).reshape(-1, len(cols))


# ------------------------------------------------------------ echo curves

ECHO_COLUMNS = ("t_seconds", "L")


def write_echo_curve(path, curve: EchoCurve):
    _write_table(path, dict(curve.meta), ECHO_COLUMNS, zip(curve.times, curve.L))


def read_echo_curve(path) -> EchoCurve:
    rows, n_head = _read_table(path, ECHO_COLUMNS)
    arr = _floats(path, rows, ECHO_COLUMNS, n_head + 2)
    meta = load_json(sidecar(path)) if sidecar(path).exists() else {}
    meta.pop("version", None)
    return EchoCurve(arr[:, 0], arr[:, 1], meta)


# ------------------------------------------------------------------ sweeps

SWEEP_COLUMNS = ("B_mT", "T_SD_s", "n", "T2_s", "diverged", "T_SD_lower_bound_s", "residual_rms")


def write_sweep(path, result: SweepResult):
    rows = []
    for B, f in zip(result.B_values, result.fits):
        if f is None:
            f = DecayFit(np.nan, np.nan, np.nan, np.nan, False, np.nan, 0, "failed")
        rows.append((float(B) * 1e3, f.T_SD, f.n_stretch, f.T2, int(f.diverged), f.T_SD_lower_bound,
                     f.residual_rms))
    meta = dict(result.meta)
    meta["errors"] = {str(k): v for k, v in result.errors.items()}
    _write_table(path, meta, SWEEP_COLUMNS, rows)


def read_sweep(path) -> SweepResult:
    rows, n_head = _read_table(path, SWEEP_COLUMNS)
    arr = _floats(path, rows, SWEEP_COLUMNS, n_head + 2)
    fits = [DecayFit(T2=r[3], T_SD=r[1], n_stretch=r[2], residual_rms=r[6], diverged=bool(r[4]),
                     T_SD_lower_bound=r[5]) for r in arr]
    meta = load_json(sidecar(path)) if sidecar(path).exists() else {}
    meta.pop("version", None)
    errors = {int(k): v for k, v in meta.pop("errors", {}).items()}
    return SweepResult(B_values=arr[:, 0] / 1e3, fits=fits, meta=meta, errors=errors)


# -------------------------------------------------------------- OWP report

def owp_to_dict(report: OWPReport | None, transition=None):
    if report is None:
        return {"transition": list(transition) if transition else None, "owp": None}
    t = report.transition
    return {
        "transition": [t.upper, t.lower],
        "frequency_GHz": t.frequency / 1e9,
        "dfdB_MHz_per_T": t.dfdB / 1e6,
        "kind": t.kind,
        "B_owp_mT": report.B_owp * 1e3,
        "B_dfdb_zero_mT": report.B_dfdb_zero * 1e3,
        "gamma_values": list(report.gamma_values),
        "levels": [list(lv) for lv in report.levels],
        "polarization_gap": report.polarization_gap,
        "all_roots_mT": [r * 1e3 for r in report.all_roots],
    }


def write_owp(path, report: OWPReport | None, meta=None, transition=None):
    dump_json(path, {"version": __version__, **(meta or {}), **owp_to_dict(report, transition)})


def read_owp(path) -> OWPReport | None:
    d = load_json(path)
    if d.get("owp", 1) is None:
        return None
    i, j = d["transition"]
    B = d["B_owp_mT"] / 1e3
    tr = TransitionSpec(upper=i, lower=j, frequency=d["frequency_GHz"] * 1e9,
                        dfdB=_unjson_float(d["dfdB_MHz_per_T"]) * 1e6, field_B=B, kind=d.get("kind"))
    return OWPReport(transition=tr, B_owp=B, B_dfdb_zero=_unjson_float(d["B_dfdb_zero_mT"]) / 1e3,
                     gamma_values=tuple(d["gamma_values"]), levels=tuple(tuple(x) for x in d["levels"]),
                     polarization_gap=d["polarization_gap"],
                     all_roots=tuple(r / 1e3 for r in d["all_roots_mT"]))


# ---------------------------------------------------------------- spectra

SPECTRUM_COLUMNS = ("frequency_MHz", "amplitude")


def write_spectrum(path, spectrum: Spectrum, meta=None):
    m = {**spectrum.meta, **(meta or {}), "linewidth_sigma_MHz": spectrum.linewidth_sigma / 1e6}
    _write_table(path, m, SPECTRUM_COLUMNS, zip(spectrum.freq_grid / 1e6, spectrum.amplitude))


def read_spectrum(path, clip_negative=True) -> Spectrum:
    """Two-column measured or simulated spectrum with its JSON sidecar.

    Measured amplitudes below zero (baseline noise) are clipped to zero
    unless ``clip_negative`` is False.
    """
    rows, n_head = _read_table(path, SPECTRUM_COLUMNS)
    arr = _floats(path, rows, SPECTRUM_COLUMNS, n_head + 2)
    meta = load_json(sidecar(path)) if sidecar(path).exists() else {}
    meta.pop("version", None)
    sigma = float(meta.pop("linewidth_sigma_MHz", 0.04)) * 1e6
    amp = np.clip(arr[:, 1], 0, None) if clip_negative else arr[:, 1]
    return Spectrum(arr[:, 0] * 1e6, amp, sigma, meta)


TRAJECTORY_COLUMNS = ("B_mT", "transition", "coupling", "level", "frequency_MHz")


def write_trajectories(path, rows, meta):
    """ENDOR line positions against field: rows of (B, transition, label, level, Hz)."""
    _write_table(path, meta, TRAJECTORY_COLUMNS,
                 [(B * 1e3, f"{t[0]}-{t[1]}", lab, lev, f / 1e6) for B, t, lab, lev, f in rows])
