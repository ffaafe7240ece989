"""Command-line front end.

Boundary units are mT, GHz, MHz and ms; everything is converted to SI (and
rad/s) before reaching the library.  Settings come from defaults, then an
optional flat ``key = value`` config file, then explicit flags (flags win).
On failure a single JSON line ``{"error": ..., "message": ...}`` goes to
stderr and the exit status is 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis, endor, io
from .cce import default_tau_grid, ensemble_average
from .constants import SI_BI
from .lattice import LatticeSpec, sample_configuration, write_bath_csv

log = logging.getLogger("sibi")

OUTPUT_ENV = "SIBI_OUTPUT_DIR"

MT, GHZ, MHZ, MS = 1e-3, 1e9, 1e6, 1e-3

DEFAULTS = {
    "seed": 0,
    "workers": None,
    "output_dir": None,
    "transition": "12,9",
    "B": None,
    "side": 80.0,
    "occupancy": 0.0467,
    "n_configs": 20,
    "k_max": 2,
    "t_max": 4.0,
    "n_points": 60,
    "field_direction": "0,0,1",
    "couplings": None,
    "sigma": 0.04,
    "sweep": None,
    "mw_frequency": None,
    "index": 0,
    "spectra": None,
    "ladder": True,
}

_ENSEMBLE_KEYS = ("transition", "side", "occupancy", "n_configs", "k_max", "t_max", "n_points", "field_direction")
COMMAND_KEYS = {
    "endor": ("transition", "B", "couplings", "sigma", "sweep", "mw_frequency"),
    "owp": ("transition",),
    "decay": _ENSEMBLE_KEYS + ("B",),
    "sweep": _ENSEMBLE_KEYS + ("B", "sweep", "ladder"),
    "lattice": _ENSEMBLE_KEYS + ("index",),
    "fit-spectrum": ("transition", "spectra"),
}


@dataclass
class RunConfig:
    """Validated settings of one command, in boundary units."""

    command: str
    seed: int = 0
    output_dir: Path = Path(".")
    workers: int = 1
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        p = self.params
        for b in _as_list(p.get("B")):
            if not 0.0 <= b * MT <= 2.0:
                raise ValueError(f"field {b} mT outside [0, 2000] mT")
        if not 0.0 <= float(p.get("occupancy", 0.0467)) <= 1.0:
            raise ValueError("occupancy must lie in [0, 1]")
        if float(p.get("side", 80.0)) < 10.0:
            raise ValueError("lattice side must be at least 10 angstrom")
        if int(self.workers) < 1:
            raise ValueError("workers must be positive")
        if int(p.get("n_configs", 1)) < 1:
            raise ValueError("n_configs must be positive")
        if float(p.get("sigma", 0.04)) <= 0:
            raise ValueError("sigma must be positive")

    @property
    def transition(self):
        return parse_transition(self.params["transition"])

    def lattice_spec(self):
        return LatticeSpec(side_length=float(self.params["side"]), occupancy_p=float(self.params["occupancy"]),
                           seed=int(self.seed), field_direction=parse_vector(self.params["field_direction"]))

    def header(self, **extra):
        keys = sorted(COMMAND_KEYS.get(self.command, ()))
        return {"command": self.command, "seed": self.seed, **{k: self.params.get(k) for k in keys}, **extra}


def _as_list(x):
    if x is None:
        return []
    if isinstance(x, (list, tuple)):
        return [float(v) for v in x]
    return [float(v) for v in str(x).replace(",", " ").split()]


def parse_transition(text):
    if isinstance(text, (list, tuple)):
        i, j = text
    else:
        parts = str(text).replace("-", ",").split(",")
        if len(parts) != 2:
            raise ValueError(f"transition must look like '12,9', got {text!r}")
        i, j = (int(p) for p in parts)
    if not (1 <= i <= 20 and 1 <= j <= 20) or i == j:
        raise ValueError(f"transition labels must be two distinct levels in 1..20, got {text!r}")
    return (max(i, j), min(i, j))


def parse_vector(text):
    v = tuple(float(x) for x in str(text).replace(",", " ").split())
    if len(v) != 3 or not any(v):
        raise ValueError(f"expected three components, got {text!r}")
    return v


def parse_range(text):
    """'start:stop:n' in mT -> array of fields in tesla."""
    parts = str(text).split(":")
    if len(parts) != 3:
        raise ValueError(f"range must be start:stop:n, got {text!r}")
    return np.linspace(float(parts[0]), float(parts[1]), int(parts[2])) * MT


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; '#' starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep or not key.strip():
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key = key.strip().replace("-", "_")
            if key not in DEFAULTS:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = val.strip()
    return out


# ---------------------------------------------------------------- commands

def _out(cfg, name):
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    return cfg.output_dir / name


def _fmt_B(b_tesla):
    return f"{b_tesla / MT:.3f}".rstrip("0").rstrip(".")


def cmd_owp(cfg: RunConfig):
    tr = cfg.transition
    report = analysis.find_owp(SI_BI, tr)
    path = _out(cfg, "owp.json")
    io.write_owp(path, report, meta={"command": "owp"}, transition=tr)
    return [path]


def cmd_decay(cfg: RunConfig):
    Bs = _as_list(cfg.params["B"])
    if len(Bs) != 1:
        raise ValueError("decay needs exactly one --B value (mT)")
    B = Bs[0] * MT
    p = cfg.params
    tau = default_tau_grid(float(p["t_max"]) * MS, int(p["n_points"]))
    curve = ensemble_average(cfg.lattice_spec(), cfg.transition, B, tau, int(p["n_configs"]), seed=cfg.seed,
                             k_max=int(p["k_max"]), workers=cfg.workers)
    fit = analysis.fit_decay(curve)
    stem = f"echo_B{_fmt_B(B)}mT"
    path = _out(cfg, stem + ".csv")
    curve.meta.update({"command": "decay", "field_direction": p["field_direction"]})
    io.write_echo_curve(path, curve)
    fit_path = _out(cfg, stem + "_fit.json")
    io.dump_json(fit_path, {"version": __version__, "B_mT": B / MT, "T_SD_s": fit.T_SD, "n": fit.n_stretch,
                            "T2_s": fit.T2, "diverged": fit.diverged, "T_SD_lower_bound_s": fit.T_SD_lower_bound,
                            "residual_rms": fit.residual_rms, "message": fit.message})
    return [path, fit_path]


def cmd_sweep(cfg: RunConfig):
    p = cfg.params
    Bs = np.array(_as_list(p["B"])) * MT if p.get("B") is not None else parse_range(p["sweep"])
    ladder = tuple(t for t in analysis.T_MAX_LADDER) if _truthy(p["ladder"]) else (float(p["t_max"]) * MS,)
    res = analysis.tsd_sweep(cfg.lattice_spec(), cfg.transition, Bs, n_configs=int(p["n_configs"]), seed=cfg.seed,
                             k_max=int(p["k_max"]), workers=cfg.workers, t_max_ladder=ladder,
                             n_points=int(p["n_points"]))
    res.meta.update({"command": "sweep", "field_direction": p["field_direction"]})
    path = _out(cfg, "sweep.csv")
    io.write_sweep(path, res)
    return [path]


def cmd_lattice(cfg: RunConfig):
    spec = cfg.lattice_spec()
    index = int(cfg.params["index"])
    bath = sample_configuration(spec, index)
    path = _out(cfg, f"bath_{index}.csv")
    write_bath_csv(path, bath, header={"version": __version__, "side_length_A": spec.side_length,
                                       "occupancy": spec.occupancy_p, "index": index})
    return [path]


def _truthy(x):
    return str(x).strip().lower() in ("1", "true", "yes", "on")


def cmd_endor(cfg: RunConfig):
    p = cfg.params
    table = endor.read_coupling_csv(p["couplings"]) if p.get("couplings") else endor.CouplingTable()
    sigma = float(p["sigma"]) * MHZ
    written = []
    traj = []
    if p.get("mw_frequency") is not None:
        pairs = [(t.levels, t.field_B) for t in analysis.resonant_transitions(SI_BI, float(p["mw_frequency"]) * GHZ)]
    elif p.get("sweep") is not None:
        pairs = [(cfg.transition, b) for b in parse_range(p["sweep"])]
    else:
        pairs = [(cfg.transition, b * MT) for b in _as_list(p["B"])]
        if not pairs:
            raise ValueError("endor needs --B, --sweep or --mw-frequency")
    single = len(pairs) <= 4 and p.get("mw_frequency") is None and p.get("sweep") is None
    for tr, B in pairs:
        for ln in endor.endor_lines(table, tr, B):
            traj.append((B, tr, ln.coupling_ref, ln.level[0], ln.frequency))
        if single or p.get("mw_frequency") is not None:
            spec_ = endor.synthesize_spectrum(table, tr, B, sigma=sigma)
            path = _out(cfg, f"spectrum_{tr[0]}-{tr[1]}_B{_fmt_B(B)}mT.csv")
            io.write_spectrum(path, spec_, meta={"command": "endor"})
            written.append(path)
    path = _out(cfg, "lines.csv")
    io.write_trajectories(path, traj, cfg.header())
    written.append(path)
    return written


def cmd_fit_spectrum(cfg: RunConfig):
    files = cfg.params.get("spectra")
    if not files:
        raise ValueError("fit-spectrum needs one or more spectrum files")
    measurements = []
    for f in files:
        sp = io.read_spectrum(f)
        if "B_mT" not in sp.meta:
            raise ValueError(f"{f}: sidecar metadata lacks B_mT")
        tr = parse_transition(sp.meta.get("transition", cfg.params["transition"]))
        measurements.append(endor.Measurement(sp, tr, float(sp.meta["B_mT"]) * MT))
    table = endor.extract_couplings(measurements)
    path = _out(cfg, "couplings.csv")
    endor.write_coupling_csv(path, table)
    return [path]


COMMANDS = {
    "endor": cmd_endor,
    "owp": cmd_owp,
    "decay": cmd_decay,
    "sweep": cmd_sweep,
    "lattice": cmd_lattice,
    "fit-spectrum": cmd_fit_spectrum,
}


# ------------------------------------------------------------------ parser

def build_parser():
    sup = argparse.SUPPRESS
    common = argparse.ArgumentParser(add_help=False, argument_default=sup)
    common.add_argument("--config", help="flat key = value settings file")
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--workers", type=int, help="worker processes (default: all CPUs)")
    common.add_argument("--output-dir", dest="output_dir", help=f"output directory (default ${OUTPUT_ENV} or .)")
    common.add_argument("--transition", help="level labels, e.g. 12,9")
    common.add_argument("-v", "--verbose", action="store_true")

    ens = argparse.ArgumentParser(add_help=False, argument_default=sup)
    ens.add_argument("--side", type=float, help="lattice side in angstrom (default 80)")
    ens.add_argument("--occupancy", type=float, help="29Si fraction (default 0.0467)")
    ens.add_argument("--n-configs", dest="n_configs", type=int, help="bath configurations (default 20)")
    ens.add_argument("--k-max", dest="k_max", type=int, choices=(1, 2, 3), help="largest cluster (default 2)")
    ens.add_argument("--t-max", dest="t_max", type=float, help="echo time cap in ms (default 4)")
    ens.add_argument("--n-points", dest="n_points", type=int, help="time points (default 60)")
    ens.add_argument("--field-direction", dest="field_direction", help="field axis in crystal frame, e.g. 0,0,1")

    parser = argparse.ArgumentParser(prog="sibi", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("endor", parents=[common], help="ENDOR line positions and spectra", argument_default=sup)
    p.add_argument("--couplings", help="coupling table CSV (label,a_iso_MHz,T_MHz,...)")
    p.add_argument("--B", nargs="+", type=float, help="field(s) in mT")
    p.add_argument("--sweep", help="field range start:stop:n in mT (line trajectories)")
    p.add_argument("--mw-frequency", dest="mw_frequency", type=float, help="EPR frequency in GHz")
    p.add_argument("--sigma", type=float, help="Gaussian width in MHz (default 0.04)")

    sub.add_parser("owp", parents=[common], help="optimal working point of a transition")

    p = sub.add_parser("decay", parents=[common, ens], help="ensemble Hahn-echo decay at one field", argument_default=sup)
    p.add_argument("--B", nargs=1, type=float, help="field in mT")

    p = sub.add_parser("sweep", parents=[common, ens], help="T_SD against field", argument_default=sup)
    p.add_argument("--B", nargs="+", type=float, help="fields in mT")
    p.add_argument("--sweep", help="field range start:stop:n in mT")
    p.add_argument("--no-ladder", dest="ladder", action="store_false",
                   help="use the fixed --t-max grid instead of the adaptive one")

    p = sub.add_parser("lattice", parents=[common, ens], help="write one bath configuration", argument_default=sup)
    p.add_argument("--index", type=int, help="configuration index (default 0)")

    p = sub.add_parser("fit-spectrum", parents=[common], help="extract couplings from spectra", argument_default=sup)
    p.add_argument("spectra", nargs="+", help="spectrum CSV files with JSON sidecars")
    return parser


def resolve(argv=None, environ=None) -> RunConfig:
    """Merge defaults, config file and flags into a :class:`RunConfig`."""
    environ = os.environ if environ is None else environ
    ns = vars(build_parser().parse_args(argv))
    command = ns.pop("command")
    ns.pop("verbose", None)
    merged = dict(DEFAULTS)
    if "config" in ns:
        merged.update(read_config_file(ns.pop("config")))
    merged.update(ns)
    out_dir = merged.pop("output_dir") or environ.get(OUTPUT_ENV) or "."
    workers = merged.pop("workers")
    workers = int(workers) if workers not in (None, "", "None") else (os.cpu_count() or 1)
    seed = int(merged.pop("seed"))
    if isinstance(merged.get("B"), str):
        merged["B"] = _as_list(merged["B"])
    parse_transition(merged["transition"])
    return RunConfig(command=command, seed=seed, output_dir=Path(out_dir), workers=workers, params=merged)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    logging.basicConfig(level=logging.INFO if ("-v" in argv or "--verbose" in argv) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(argv)
        paths = COMMANDS[cfg.command](cfg)
    except SystemExit:
        raise
    except Exception as exc:  # noqa: BLE001 - the CLI reports every failure the same way
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
