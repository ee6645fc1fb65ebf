"""INI configuration: NVParams blocks, per-command sections and shipped presets.

Schema of the ``[nv]`` block (all keys optional, defaults shown)::

    [nv]
    D = 2870.0             # ground zero-field splitting, MHz
    D_ex = 1430.0          # excited zero-field splitting, MHz (1400 also quoted)
    gamma_e = 2.8025       # electron gyromagnetic ratio, MHz/G
    gamma_n = -0.307       # 14N gyromagnetic ratio, kHz/G, signed
    Q_n = -4.94            # quadrupole constant, MHz
    A_perp_ex = 20.0       # transverse excited hyperfine, MHz
    A_zz_ex = -20.0        # longitudinal excited hyperfine, MHz
    strain_E = 0.0         # ground transverse strain, MHz
    ground_hyperfine = false
    A_zz_gs = -2.16        # ground longitudinal hyperfine when enabled, MHz
"""
from __future__ import annotations

import configparser
from dataclasses import fields
from importlib import resources
from pathlib import Path

from .errors import ConfigError, InvalidInputError
from .spin import NVParams

NV_SECTION = "nv"
RUN_SECTION = "run"

_UNITS = {
    "D": "MHz", "D_ex": "MHz", "gamma_e": "MHz/G", "gamma_n": "kHz/G, signed", "Q_n": "MHz",
    "A_perp_ex": "MHz", "A_zz_ex": "MHz", "strain_E": "MHz", "ground_hyperfine": "bool", "A_zz_gs": "MHz",
}


def new_parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case sensitive (D vs d)
    return cp


def read_config(path: str | Path) -> configparser.ConfigParser:
    cp = new_parser()
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}", key=str(path)) from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return cp


def preset_names() -> list[str]:
    return sorted(p.name[:-4] for p in resources.files("levnmr.presets").iterdir() if p.name.endswith(".ini"))


def read_preset(name: str) -> configparser.ConfigParser:
    res = resources.files("levnmr.presets") / f"{name}.ini"
    if not res.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}", key=name)
    cp = new_parser()
    cp.read_string(res.read_text(encoding="utf-8"))
    return cp


def params_from_config(cp: configparser.ConfigParser) -> NVParams:
    if not cp.has_section(NV_SECTION):
        return NVParams()
    sec = cp[NV_SECTION]
    known = {f.name: f for f in fields(NVParams)}
    kw = {}
    for key in sec:
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{NV_SECTION}]", key=key)
        try:
            kw[key] = sec.getboolean(key) if key == "ground_hyperfine" else sec.getfloat(key)
        except ValueError as exc:
            raise ConfigError(f"[{NV_SECTION}] {key}: {exc}", key=key) from exc
    try:
        return NVParams(**kw)
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from exc


def params_to_ini(params: NVParams) -> str:
    lines = [f"[{NV_SECTION}]"]
    for f in fields(params):
        v = getattr(params, f.name)
        v = str(v).lower() if isinstance(v, bool) else repr(float(v))
        lines.append(f"{f.name} = {v}  # {_UNITS[f.name]}")
    return "\n".join(lines) + "\n"


class Section:
    """Typed accessor over one config section; missing keys name themselves."""

    def __init__(self, cp: configparser.ConfigParser, name: str):
        if not cp.has_section(name):
            raise ConfigError(f"missing section [{name}]", key=name)
        self.name = name
        self._sec = cp[name]
        self.used: set[str] = set()

    def _raw(self, key, default):
        self.used.add(key)
        if key in self._sec:
            return self._sec[key]
        if default is _REQUIRED:
            raise ConfigError(f"missing key {key!r} in [{self.name}]", key=key)
        return default

    def _conv(self, key, raw, fn):
        try:
            return fn(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{self.name}] {key} = {raw!r}: {exc}", key=key) from exc

    def float(self, key, default=None):
        if default is None:
            default = _REQUIRED
        raw = self._raw(key, default)
        return raw if not isinstance(raw, str) else self._conv(key, raw, float)

    def int(self, key, default=None):
        if default is None:
            default = _REQUIRED
        raw = self._raw(key, default)
        return raw if not isinstance(raw, str) else self._conv(key, raw, int)

    def str(self, key, default=None):
        if default is None:
            default = _REQUIRED
        return str(self._raw(key, default))

    def bool(self, key, default=None):
        if default is None:
            default = _REQUIRED
        raw = self._raw(key, default)
        if isinstance(raw, bool):
            return raw
        v = raw.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{self.name}] {key} = {raw!r}: not a boolean", key=key)

    def floats(self, key, default=None):
        if default is None:
            default = _REQUIRED
        raw = self._raw(key, default)
        if not isinstance(raw, str):
            return tuple(raw)
        return tuple(self._conv(key, x, float) for x in raw.replace(",", " ").split())

    def unknown_keys(self) -> list[str]:
        return sorted(set(self._sec) - self.used)


_REQUIRED = object()


def config_as_dict(cp: configparser.ConfigParser) -> dict:
    return {s: dict(cp[s]) for s in cp.sections()}
