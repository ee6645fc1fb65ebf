"""Command-line front end: one subcommand per reproduced figure.

Exit codes: 0 success, 2 configuration or usage error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import math
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .align import run_campaign
from .config import Section, config_as_dict, params_from_config, preset_names, read_config, read_preset
from .dnp import PolarizationMap, PumpModel, levitated_polarization, polarization_map, pump_steady_state
from .dynamics import (DecayParams, DriveParams, TimeTrace, fit_damped_cosine, lambda_lineshape, rabi_trace,
                       ramsey_trace)
from .errors import AmbiguousLabelError, ConfigError, ConvergenceError, InvalidInputError, QueryBudgetExceeded
from .export import (
    angle_curve_table,
    atomic_write,
    csv_text,
    json_text,
    levels_table,
    polarization_summary,
    polarization_table,
    spectrum_sidecar,
    spectrum_table,
    time_trace_table,
)
from .levitation import DIAMOND_DENSITY, TrapParams, angle_curve, min_diameter
from .spectra import (ClassGeometry, LineShapeParams, class_projections, odmr_spectrum, odnmr_spectrum,
                      p1_coresonance_field)
from .spin import (EXCITED, GROUND, FieldVector, coupled_crossing_field, eigensystem, eslac_field,
                   hamiltonian_coupled, hamiltonian_electron)

log = logging.getLogger("levnmr")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
FORMATS = ("csv", "json", "both")

DEFAULT_PRESETS = {
    "levels": "sm_energy_levels",
    "odmr": "sm_odmr_classes",
    "odnmr": "sm_odnmr_bulk_436G",
    "dnp": "sm_dnp_map",
    "rabi": "fig3a_rabi",
    "ramsey": "fig3b_ramsey",
    "confine": "fig2a_confinement",
    "align": "main_alignment_campaign",
}


@dataclass
class Outputs:
    tables: list = field(default_factory=list)  # (stem, header, rows, decimals, comments)
    docs: dict = field(default_factory=dict)  # stem -> JSON-able object
    status: int = EXIT_OK

    def table(self, stem, header, rows, decimals=None, comments=()):
        self.tables.append((stem, header, rows, decimals or {}, tuple(comments)))


def _sweep(sec: Section, lo: str, hi: str, step: str) -> np.ndarray:
    a, b, h = sec.float(lo), sec.float(hi), sec.float(step)
    if not h > 0:
        raise ConfigError(f"[{sec.name}] {step} must be positive", key=step)
    if b < a:
        raise ConfigError(f"[{sec.name}] empty sweep: {hi} < {lo}", key=hi)
    n = int(math.floor((b - a) / h + 1e-9)) + 1
    return a + h * np.arange(n)


def _direction(theta_deg: float, phi_deg: float) -> tuple:
    t, p = math.radians(theta_deg), math.radians(phi_deg)
    return (math.sin(t) * math.cos(p), math.sin(t) * math.sin(p), math.cos(t))


# --- subcommands -------------------------------------------------------------

def cmd_levels(cp, args) -> Outputs:
    p = params_from_config(cp)
    sec = Section(cp, "levels")
    fields_g = _sweep(sec, "b_min", "b_max", "b_step")
    theta = sec.float("theta_deg", 0.0)
    coupled = sec.bool("coupled", False)
    out = Outputs()
    fv = [FieldVector.from_angles(float(b), theta) for b in fields_g]
    for manifold in (GROUND, EXCITED):
        sweep = [(f.magnitude, eigensystem(hamiltonian_electron(p, f, manifold))) for f in fv]
        header, rows, dec = levels_table(sweep)
        out.table(f"levels_{manifold}", header, rows, dec)
        if coupled:
            sweep9 = [(f.magnitude, eigensystem(hamiltonian_coupled(p, f, manifold))) for f in fv]
            header, rows, dec = levels_table(sweep9)
            out.table(f"levels_{manifold}_coupled", header, rows, dec)
    half = p.gamma_e / 2
    p1_rows = [(b, lab, s * half * b) for b in fields_g for lab, s in (("|+1/2_P1>", 1), ("|-1/2_P1>", -1))]
    out.table("levels_p1", ("B_gauss", "level_label", "energy_MHz"), p1_rows, {0: 6, 2: 6})
    # crossing of |0_e> and |-1_e> in the excited sweep, read off the data
    ex = [eigensystem(hamiltonian_electron(p, f, EXCITED)) for f in fv]
    gap = np.array([lv.energy(0) - lv.energy(-1) for lv in ex])
    idx = np.where(np.diff(np.sign(gap)) != 0)[0]
    seen = None
    if idx.size:
        i = int(idx[0])
        seen = float(fields_g[i] - gap[i] * (fields_g[i + 1] - fields_g[i]) / (gap[i + 1] - gap[i]))
    out.docs["levels"] = {
        "eslac_field_g": eslac_field(p),
        "coupled_crossing_field_g": coupled_crossing_field(p),
        "p1_coresonance_field_g": p1_coresonance_field(p),
        "excited_crossing_in_sweep_g": seen,
        "theta_deg": theta,
        "params": asdict(p),
    }
    return out


def cmd_odmr(cp, args) -> Outputs:
    p = params_from_config(cp)
    sec = Section(cp, "odmr")
    grid = _sweep(sec, "f_min", "f_max", "f_step")
    geom = ClassGeometry.with_axis_along(_direction(sec.float("axis_theta_deg", 0.0), sec.float("axis_phi_deg", 0.0)),
                                         sec.float("twist_deg", 0.0))
    fv = FieldVector(sec.float("field_g"), _direction(sec.float("theta_deg", 0.0), sec.float("phi_deg", 0.0)))
    shape = LineShapeParams(sec.float("width_mhz", 1.0), sec.float("contrast", 0.02))
    tr = odmr_spectrum(p, geom, fv, shape, grid)
    out = Outputs()
    header, rows, dec = spectrum_table(tr)
    out.table("odmr", header, rows, dec)
    proj = [{"class": k, "b_parallel_g": bp, "misalignment_deg": th}
            for k, (bp, th) in enumerate(class_projections(geom, fv))]
    out.docs["odmr"] = spectrum_sidecar(tr, classes=proj, field_g=fv.magnitude)
    return out


def cmd_odnmr(cp, args) -> Outputs:
    p = params_from_config(cp)
    sec = Section(cp, "odnmr")
    b = sec.float("field_g")
    grid = _sweep(sec, "f_min", "f_max", "f_step")
    contrast = sec.float("contrast", 0.006)
    model = sec.str("model", "lorentzian")
    pops_raw = sec.str("populations", "auto")
    if pops_raw.strip() == "auto":
        pops = pump_steady_state(p, FieldVector.aligned(b), PumpModel()).populations
    else:
        pops = sec.floats("populations")
    out = Outputs()
    if model == "lorentzian":
        tr = odnmr_spectrum(p, b, pops, LineShapeParams(sec.float("width_mhz", 0.011), contrast), grid)
    elif model == "lambda":
        tr = lambda_lineshape(p, b, sec.float("rabi_khz", 8.5), grid, contrast=contrast,
                              t2_star_us=sec.float("t2_star_us", 120.0),
                              pump_rate_per_us=sec.float("pump_rate_per_us", 0.05),
                              leak_rate_per_us=sec.float("leak_rate_per_us", 0.005))
    else:
        raise ConfigError(f"[odnmr] model must be 'lorentzian' or 'lambda', got {model!r}", key="model")
    header, rows, dec = spectrum_table(tr)
    out.table("odnmr", header, rows, dec)
    out.docs["odnmr"] = spectrum_sidecar(tr, field_g=b, populations=list(pops), model=model)
    return out


def _dnp_row(task):
    p, model, b, angles = task
    return polarization_map(p, model, [b], angles).results[0]


def cmd_dnp(cp, args) -> Outputs:
    p = params_from_config(cp)
    sec = Section(cp, "dnp")
    fields_g = _sweep(sec, "b_min", "b_max", "b_step")
    angles = _sweep(sec, "theta_min", "theta_max", "theta_step")
    model = PumpModel(
        laser_rate=sec.float("laser_rate", 1e6), dwell_ns=sec.float("dwell_ns", 12.0), leak=sec.float("leak", 1e-3),
        averaging=sec.str("averaging", "exponential"), p1_penalty_depth=sec.float("p1_penalty_depth", 0.0),
        p1_penalty_width_g=sec.float("p1_penalty_width_g", 5.0),
    )
    tasks = [(p, model, float(b), angles) for b in fields_g]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            rows = tuple(ex.map(_dnp_row, tasks))
    else:
        rows = tuple(_dnp_row(t) for t in tasks)
    pmap = PolarizationMap(fields_g, angles, rows)
    out = Outputs()
    header, trows, dec = polarization_table(pmap)
    out.table("dnp_map", header, trows, dec)
    summary = polarization_summary(pmap)
    summary["model"] = asdict(model)
    summary["uncalibrated"] = ["laser_rate", "dwell_ns", "leak", "p1_penalty_depth", "p1_penalty_width_g"]
    std = sec.float("angle_std_deg", 0.0)
    if std > 0:
        b_star = summary["argmax"]["B_gauss"]
        lev = levitated_polarization(p, model, FieldVector.aligned(b_star), std,
                                     sec.int("n_samples", 2000), seed=args.seed)
        summary["levitated"] = {"B_gauss": b_star, "angle_std_deg": std, "P": lev.polarization,
                                "stderr": lev.polarization_stderr}
    out.docs["dnp_map"] = summary
    return out


def _trace_outputs(stem, trace, sec, args) -> Outputs:

    sigma = sec.float("noise_sigma", 0.0)
    if sigma > 0:
        rng = np.random.default_rng(args.seed)
        trace = TimeTrace(trace.t_us, np.clip(trace.signal + sigma * rng.standard_normal(trace.t_us.size), 0, 1),
                          {**trace.metadata, "noise_sigma": sigma})
    out = Outputs()
    header, rows, dec = time_trace_table(trace)
    out.table(stem, header, rows, dec)
    doc = {"metadata": trace.metadata, "seed": args.seed}
    if sec.bool("fit", True):
        fit = fit_damped_cosine(trace)
        doc["fit"] = asdict(fit)
        if not fit.converged:
            log.error("fit did not converge: %s", fit.message)
            out.status = EXIT_NUMERIC
    out.docs[stem] = doc
    return out


def cmd_rabi(cp, args) -> Outputs:
    sec = Section(cp, "rabi")
    grid = _sweep(sec, "t_min_us", "t_max_us", "t_step_us")
    tr = rabi_trace(DriveParams(sec.float("rabi_khz"), sec.float("detuning_khz", 0.0)),
                    DecayParams(t1_rho_us=sec.float("t1_rho_us", math.inf)), grid)
    return _trace_outputs("rabi", tr, sec, args)


def cmd_ramsey(cp, args) -> Outputs:
    sec = Section(cp, "ramsey")
    grid = _sweep(sec, "t_min_us", "t_max_us", "t_step_us")
    total = sec.float("total_dark_us", float(grid[-1]))
    tr = ramsey_trace(DriveParams(sec.float("rabi_khz", 8.5), sec.float("detuning_khz")),
                      DecayParams(t2_star_us=sec.float("t2_star_us", math.inf)), grid, total,
                      sec.float("phase", 0.0))
    return _trace_outputs("ramsey", tr, sec, args)


def cmd_confine(cp, args) -> Outputs:
    sec = Section(cp, "confine")
    radii = _sweep(sec, "r_min_um", "r_max_um", "r_step_um")
    if radii[0] <= 0:
        raise ConfigError("[confine] r_min_um must be positive", key="r_min_um")
    freqs = sec.floats("libration_hz")
    if not freqs:
        raise ConfigError("[confine] libration_hz is empty", key="libration_hz")
    temp = sec.float("temperature_k", 300.0)
    rho = sec.float("density", DIAMOND_DENSITY)
    thr = sec.float("threshold_deg", 1.0)
    vals = angle_curve(radii, freqs, temp, rho)
    out = Outputs()
    header, rows, dec, comments = angle_curve_table(radii, freqs, vals, temp, rho)
    out.table("confine", header, rows, dec, comments)
    out.docs["confine"] = {
        "threshold_deg": thr, "temperature_k": temp, "density": rho,
        "min_diameter_um": {str(f): min_diameter(TrapParams(f, temp), thr, rho) for f in freqs},
    }
    return out


def cmd_align(cp, args) -> Outputs:
    sec = Section(cp, "align")
    n = sec.int("n_scenarios", 100)
    if n < 1:
        raise ConfigError("[align] n_scenarios must be >= 1", key="n_scenarios")
    overrides = dict(
        noise_sigma=sec.float("noise_sigma", 0.002), drift_deg=sec.float("drift_deg", 1.5),
        b_offset_g=sec.float("b_offset_g", 5.0), budget=sec.int("budget", 2000),
        reads_per_eval=sec.int("reads_per_eval", 4), resolution_deg=sec.float("resolution_deg", 0.1),
        params=params_from_config(cp),
    )
    camp = run_campaign(n, args.seed, args.jobs, max_offset_deg=sec.float("max_offset_deg", 15.0), **overrides)
    out = Outputs()
    rows, traj = [], []
    for k, r in enumerate(camp.reports):
        sd = args.seed + k
        rows.append((sd, r.success, r.final_misalignment_deg, r.final_field_g, r.queries, r.polarization))
        for s in r.steps:
            for a, b, v in s.trajectory:
                traj.append((sd, s.name, a, b, v))
    out.table("align", ("scenario_seed", "success", "final_misalignment_deg", "final_field_g", "queries",
                        "polarization"), rows)
    out.table("align_trajectory", ("scenario_seed", "step", "alpha_deg", "beta_deg", "objective"), traj)
    out.docs["align"] = {"n_scenarios": n, "n_success": camp.n_success,
                         "reports": [r.to_dict() for r in camp.reports]}
    return out


COMMANDS = {
    "levels": (cmd_levels, "energy levels versus field (ground, excited, P1)"),
    "odmr": (cmd_odmr, "ODMR spectrum over the four NV classes"),
    "odnmr": (cmd_odnmr, "ODNMR spectrum of the two 14N lines"),
    "dnp": (cmd_dnp, "steady-state nuclear polarization map"),
    "rabi": (cmd_rabi, "nuclear Rabi trace and damped-cosine fit"),
    "ramsey": (cmd_ramsey, "nuclear Ramsey trace and damped-cosine fit"),
    "confine": (cmd_confine, "thermal libration angle versus particle radius"),
    "align": (cmd_align, "seeded Monte-Carlo of the magnet alignment procedure"),
}


# --- plumbing ----------------------------------------------------------------

def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}")
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit value")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI config file (replaces the default preset)")
    common.add_argument("--preset", help="name of a shipped preset, see `levnmr presets`")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: ./out)")
    common.add_argument("--seed", type=_seed, default=0)
    common.add_argument("--jobs", type=_positive_int, default=1)
    common.add_argument("--format", choices=FORMATS, default="both")
    common.add_argument("--timing", action="store_true",
                        help="record wall time in the manifest (makes it differ between runs)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="levnmr", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"levnmr {__version__}")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    for name, (_, help_) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_, description=help_)
    sub.add_parser("presets", help="list shipped presets")
    return ap


def _write(out_dir: Path, outputs: Outputs, fmt: str) -> list[Path]:
    written = []
    table_stems = set()
    for stem, header, rows, dec, comments in outputs.tables:
        table_stems.add(stem)
        if fmt in ("csv", "both"):
            written.append(atomic_write(out_dir / f"{stem}.csv", csv_text(header, rows, comments, dec)))
        if fmt == "json":
            doc = dict(outputs.docs.get(stem, {}))
            doc["data"] = {"columns": list(header), "rows": [list(r) for r in rows]}
            if comments:
                doc["comments"] = list(comments)
            written.append(atomic_write(out_dir / f"{stem}.json", json_text(doc)))
    if fmt in ("json", "both"):
        for stem, doc in outputs.docs.items():
            if fmt == "json" and stem in table_stems:
                continue
            written.append(atomic_write(out_dir / f"{stem}.json", json_text(doc)))
    return written


def _manifest(args, cp, files, wall, status, source) -> dict:
    """Run record. Byte-identical for identical inputs unless ``--timing`` adds the wall time."""
    entries = []
    for f in sorted(files):
        data = f.read_bytes()
        entries.append({"name": f.name, "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()})
    doc = {
        "command": args.command,
        "config_source": source,
        "config": config_as_dict(cp),
        "seed": args.seed,
        "jobs": args.jobs,
        "format": args.format,
        "versions": {"levnmr": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__},
        "exit_code": status,
        "files": entries,
    }
    if args.timing:
        doc["wall_time_s"] = wall
    return doc


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "presets":
        print("\n".join(preset_names()))
        return EXIT_OK

    fn = COMMANDS[args.command][0]
    t0 = time.perf_counter()
    try:
        if args.config is not None and args.preset is not None:
            raise ConfigError("use either --config or --preset, not both")
        if args.config is not None:
            cp, source = read_config(args.config), str(args.config)
        else:
            name = args.preset or DEFAULT_PRESETS[args.command]
            cp, source = read_preset(name), f"preset:{name}"
        outputs = fn(cp, args)
    except ConfigError as exc:
        print(f"levnmr {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvalidInputError as exc:
        print(f"levnmr {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, AmbiguousLabelError, QueryBudgetExceeded, np.linalg.LinAlgError) as exc:
        print(f"levnmr {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    files = _write(args.out, outputs, args.format)
    wall = time.perf_counter() - t0
    atomic_write(args.out / "manifest.json",
                 json_text(_manifest(args, cp, files, wall, outputs.status, source)))
    log.info("wrote %d files to %s in %.2f s", len(files) + 1, args.out, wall)
    return outputs.status


if __name__ == "__main__":
    sys.exit(main())
