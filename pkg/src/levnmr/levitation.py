"""Thermal angular confinement of a librating micro-diamond.

The equipartition variance of one libration angle is k_B T / (I w^2) with
w = 2*pi*f the angular eigenfrequency.  Radii are in micrometres and
frequencies are cycle frequencies in Hz.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.constants import k as K_B
from scipy.optimize import brentq

from .errors import InvalidInputError

DIAMOND_DENSITY = 3515.0  # kg/m^3


@dataclass(frozen=True)
class ParticleGeometry:
    radius_um: float
    density: float = DIAMOND_DENSITY
    inertia_override: float | None = None  # kg m^2

    def __post_init__(self):
        if not self.radius_um > 0 or not self.density > 0:
            raise InvalidInputError("radius and density must be positive")
        if self.inertia_override is not None and not self.inertia_override > 0:
            raise InvalidInputError("moment of inertia must be positive")

    @property
    def inertia(self) -> float:
        if self.inertia_override is not None:
            return self.inertia_override
        return sphere_inertia(self.radius_um, self.density)


@dataclass(frozen=True)
class TrapParams:
    libration_hz: float
    temperature_k: float = 300.0

    def __post_init__(self):
        if not self.libration_hz > 0:
            raise InvalidInputError("libration frequency must be positive")
        if self.temperature_k < 0:
            raise InvalidInputError("temperature must be >= 0")


def sphere_inertia(radius_um: float, density: float = DIAMOND_DENSITY) -> float:
    r = radius_um * 1e-6
    return 8.0 / 15.0 * math.pi * density * r**5


def angle_std(geom: ParticleGeometry, trap: TrapParams) -> float:
    """Thermal standard deviation of one libration angle, in degrees."""
    w = 2 * math.pi * trap.libration_hz
    var = K_B * trap.temperature_k / (geom.inertia * w**2)
    return math.degrees(math.sqrt(var))


def min_diameter(trap: TrapParams, threshold_deg: float, density: float = DIAMOND_DENSITY) -> float:
    """Smallest sphere diameter (um) whose thermal angle std is <= threshold."""
    if not threshold_deg > 0:
        raise InvalidInputError("threshold must be positive")
    if math.isinf(threshold_deg) or trap.temperature_k == 0:
        return 0.0
    w = 2 * math.pi * trap.libration_hz
    theta = math.radians(threshold_deg)
    r5 = 15.0 * K_B * trap.temperature_k / (8.0 * math.pi * density * w**2 * theta**2)
    return 2e6 * r5**0.2


def min_diameter_bisect(trap: TrapParams, threshold_deg: float, density: float = DIAMOND_DENSITY) -> float:
    """Root-bracketing counterpart of min_diameter, used as a cross-check."""
    def f(d_um):
        return angle_std(ParticleGeometry(d_um / 2, density), trap) - threshold_deg

    lo, hi = 1e-3, 1.0
    while f(hi) > 0:
        hi *= 2
    return brentq(f, lo, hi, xtol=1e-14, rtol=1e-14)


def sample_thermal_angles(geom: ParticleGeometry, trap: TrapParams, n: int, seed: int | None = None,
                          std_deg: float | None = None) -> np.ndarray:
    """Zero-mean Gaussian libration angles in degrees, reproducible per seed.

    ``std_deg`` bypasses the geometry when the spread is already known.
    """
    if n < 1:
        raise InvalidInputError("need at least one sample")
    sigma = angle_std(geom, trap) if std_deg is None else float(std_deg)
    rng = np.random.default_rng(seed)
    return sigma * rng.standard_normal(n)


def angle_curve(radii_um, freqs_hz, temperature_k: float = 300.0, density: float = DIAMOND_DENSITY):
    """Delta-theta(r) table, one column per libration frequency."""
    radii = np.asarray(radii_um, dtype=float)
    out = np.empty((radii.size, len(freqs_hz)))
    for j, f in enumerate(freqs_hz):
        trap = TrapParams(f, temperature_k)
        out[:, j] = [angle_std(ParticleGeometry(r, density), trap) for r in radii]
    return out
