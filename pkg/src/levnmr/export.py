"""Deterministic CSV/JSON writers for the library's result types.

CSV: comma separated, '.' decimal, header row, UTF-8, LF endings.  Every
file is written to a temporary sibling and renamed into place.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, is_dataclass
from pathlib import Path

import numpy as np


def atomic_write(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def fmt(x, decimals: int | None = None) -> str:
    if isinstance(x, str):
        return x
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    if decimals is not None:
        s = f"{x:.{decimals}f}"
        return "0." + "0" * decimals if s == "-0." + "0" * decimals else s
    return f"{x:.12g}"


def csv_text(header, rows, comments=(), decimals: dict | None = None) -> str:
    """``decimals`` maps a column index to a fixed number of decimals."""
    decimals = decimals or {}
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v, decimals.get(i)) for i, v in enumerate(row)])
    return buf.getvalue()


def _jsonable(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    return obj


def json_text(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


# --- per-type tables ---------------------------------------------------------

LEVELS_HEADER = ("B_gauss", "level_label", "energy_MHz")


def levels_table(sweep) -> tuple:
    """``sweep`` yields (B, LevelSet) pairs."""
    from .spin import format_label

    rows = []
    for b, levels in sweep:
        for e, lab in zip(levels.energies, levels.labels):
            rows.append((b, format_label(lab), e))
    return LEVELS_HEADER, rows, {0: 6, 2: 6}


def spectrum_table(trace) -> tuple:
    col = "frequency_MHz" if trace.axis == "frequency_MHz" else trace.axis
    return (col, "pl"), list(zip(trace.x, trace.pl)), {0: 6, 1: 9}


def spectrum_sidecar(trace, **extra) -> dict:
    return {
        "axis": trace.axis,
        "n_points": int(trace.x.size),
        "lines": [asdict(l) for l in trace.lines],
        **extra,
    }


def time_trace_table(trace) -> tuple:
    return ("t_us", "signal"), list(zip(trace.t_us, trace.signal)), {0: 6, 1: 12}


def polarization_table(pmap) -> tuple:
    return ("B_gauss", "theta_deg", "P", "p_plus1", "p_0", "p_minus1"), list(pmap.rows()), {}


def polarization_summary(pmap, thresholds=(0.5, 0.9)) -> dict:
    p = pmap.polarization
    b_star, th_star = pmap.argmax
    crossed = {}
    for t in thresholds:
        mask = p >= t
        crossed[str(t)] = {
            "n_points": int(mask.sum()),
            "fields_g": [float(b) for b in pmap.fields_g[mask.any(axis=1)]],
        }
    return {"argmax": {"B_gauss": b_star, "theta_deg": th_star, "P": float(p.max())},
            "thresholds": crossed}


def angle_curve_table(radii, freqs, values, temperature_k, density) -> tuple:
    header = ("radius_um",) + tuple(f"dtheta_deg_{fmt(f)}Hz" for f in freqs)
    rows = [(r, *vals) for r, vals in zip(radii, values)]
    comments = (f"temperature_K = {fmt(temperature_k)}", f"density_kg_m3 = {fmt(density)}",
                "libration_Hz = " + " ".join(fmt(f) for f in freqs))
    return header, rows, {}, comments


def write_table(path, header, rows, decimals=None, comments=()) -> Path:
    return atomic_write(path, csv_text(header, rows, comments, decimals))


def write_json(path, obj) -> Path:
    return atomic_write(path, json_text(obj))
