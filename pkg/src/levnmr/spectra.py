"""Synthetic ODMR, ODNMR and NV-P1 cross-relaxation spectra.

Every dip is a peak-normalized Lorentzian; PL = baseline * (1 - sum c_j L_j).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import InvalidInputError
from .spin import (
    ELECTRON,
    GROUND,
    FieldVector,
    NVParams,
    eigensystem,
    hamiltonian_electron,
    nuclear_frequencies,
    relabel_by_assignment,
    transition_frequencies,
)

NV_AXES_CRYSTAL = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float) / math.sqrt(3)
TETRAHEDRAL_ANGLE = math.degrees(math.acos(-1 / 3))


def _perp_axes(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref = np.array([0.0, 0.0, 1.0]) if abs(z[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    x = ref - (ref @ z) * z
    x /= np.linalg.norm(x)
    return x, np.cross(z, x)


@dataclass(frozen=True)
class ClassGeometry:
    """Four NV classes along <111>; ``rotation`` maps crystal to lab frame."""

    rotation: np.ndarray = None

    def __post_init__(self):
        r = np.eye(3) if self.rotation is None else np.asarray(self.rotation, dtype=float)
        if r.shape != (3, 3) or np.max(np.abs(r @ r.T - np.eye(3))) > 1e-9 or np.linalg.det(r) < 0:
            raise InvalidInputError("rotation must be a proper orthonormal 3x3 matrix")
        object.__setattr__(self, "rotation", r)

    @classmethod
    def from_euler(cls, angles_deg, seq: str = "zyz") -> "ClassGeometry":
        return cls(Rotation.from_euler(seq, angles_deg, degrees=True).as_matrix())

    @classmethod
    def with_axis_along(cls, direction, twist_deg: float = 0.0, nv_class: int = 0) -> "ClassGeometry":
        """Geometry whose ``nv_class`` axis points along the lab ``direction``."""
        d = np.asarray(direction, dtype=float)
        d = d / np.linalg.norm(d)
        rot, _ = Rotation.align_vectors([d], [NV_AXES_CRYSTAL[nv_class]])
        twist = Rotation.from_rotvec(math.radians(twist_deg) * d)
        return cls((twist * rot).as_matrix())

    @property
    def axes(self) -> np.ndarray:
        """Lab-frame unit vectors of the four NV axes (rows)."""
        return NV_AXES_CRYSTAL @ self.rotation.T

    def nv_frame(self, k: int) -> np.ndarray:
        """Rows x, y, z of class ``k``'s NV frame in lab coordinates."""
        z = self.axes[k]
        cx, cy = _perp_axes(NV_AXES_CRYSTAL[k])
        x = self.rotation @ cx
        y = np.cross(z, x)
        return np.vstack([x, y, z])

    def field_in_class(self, field: FieldVector, k: int) -> FieldVector:
        if field.magnitude == 0:
            return FieldVector(0.0)
        return FieldVector.from_vector(self.nv_frame(k) @ field.vector)


@dataclass(frozen=True)
class LineShapeParams:
    width: float = 1.0  # FWHM, in the units of the spectrum axis
    contrast: float = 0.02
    baseline: float = 1.0

    def __post_init__(self):
        if not self.width > 0:
            raise InvalidInputError("line width must be positive")
        if not 0 <= self.contrast < 1:
            raise InvalidInputError("contrast must lie in [0, 1)")
        if not 0 < self.baseline <= 1:
            raise InvalidInputError("baseline must lie in (0, 1]")


STATIC_ODNMR = LineShapeParams(width=0.011, contrast=0.006)
LEVITATED_ODNMR = LineShapeParams(width=0.011, contrast=0.006 / 30)


@dataclass(frozen=True)
class Line:
    center: float
    width: float
    contrast: float
    class_id: int | None
    label: str


@dataclass(frozen=True)
class SpectrumTrace:
    x: np.ndarray
    pl: np.ndarray
    lines: tuple = ()
    axis: str = "frequency_MHz"

    def __post_init__(self):
        if self.x.ndim != 1 or self.x.shape != self.pl.shape:
            raise InvalidInputError("axis and PL must be 1-D arrays of equal length")

    @property
    def frequencies(self) -> np.ndarray:
        return self.x

    def line_centers(self, min_contrast: float = 0.0) -> np.ndarray:
        return np.array(sorted(l.center for l in self.lines if l.contrast > min_contrast))


def lorentzian(x, center: float, fwhm: float) -> np.ndarray:
    hw = fwhm / 2
    return hw**2 / ((np.asarray(x) - center) ** 2 + hw**2)


def _grid(grid) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size == 0:
        raise InvalidInputError("grid must be a non-empty 1-D array")
    if g.size > 1 and np.any(np.diff(g) <= 0):
        raise InvalidInputError("grid must be strictly increasing")
    return g


def synthesize(grid, lines, baseline: float = 1.0, axis: str = "frequency_MHz") -> SpectrumTrace:
    g = _grid(grid)
    lines = tuple(lines)
    total = sum(l.contrast for l in lines)
    if total >= 1:
        raise InvalidInputError("summed contrast must stay below 1")
    if lines:
        c = np.array([l.contrast for l in lines])[:, None]
        prof = lorentzian(g[None, :], np.array([l.center for l in lines])[:, None],
                          np.array([l.width for l in lines])[:, None])
        dip = np.sum(c * prof, axis=0)
    else:
        dip = np.zeros_like(g)
    return SpectrumTrace(g, baseline * (1.0 - dip), lines, axis)


def class_projections(geom: ClassGeometry, field: FieldVector) -> list[tuple[float, float]]:
    """(|B_parallel| in G, misalignment in deg, folded into [0, 90]) per class."""
    out = []
    for a in geom.axes:
        if field.magnitude == 0:
            out.append((0.0, 0.0))
            continue
        c = float(np.clip(np.asarray(field.direction) @ a, -1, 1))
        out.append((field.magnitude * abs(c), math.degrees(math.acos(abs(c)))))
    return out


def odmr_lines(params: NVParams, geom: ClassGeometry, field: FieldVector, shape: LineShapeParams) -> list[Line]:
    lines = []
    for k in range(4):
        f = geom.field_in_class(field, k)
        levels = relabel_by_assignment(eigensystem(hamiltonian_electron(params, f, GROUND)))
        for t in transition_frequencies(levels, ELECTRON):
            lines.append(Line(t.frequency, shape.width, shape.contrast * t.zero_character, k, t.label))
    return lines


def odmr_spectrum(params: NVParams, geom: ClassGeometry, field: FieldVector,
                  shape: LineShapeParams = LineShapeParams(), grid=None) -> SpectrumTrace:
    """CW ODMR over the four classes; contrast scales with |<0|initial>|^2."""
    if grid is None:
        raise InvalidInputError("a frequency grid is required")
    return synthesize(grid, odmr_lines(params, geom, field, shape), shape.baseline)


def odnmr_spectrum(params: NVParams, b_parallel: float, populations, shape: LineShapeParams = STATIC_ODNMR,
                   grid=None) -> SpectrumTrace:
    """Two nuclear lines in the ground |0_e> manifold.

    populations are (p+1, p0, p-1); each line's contrast is ``shape.contrast``
    times the population of its initial state (|+1_N> upper, |-1_N> lower).
    """
    pops = np.asarray(populations, dtype=float)
    if pops.shape != (3,) or np.any(pops < 0) or abs(pops.sum() - 1) > 1e-9:
        raise InvalidInputError("populations must be three non-negative numbers summing to 1")
    if grid is None:
        raise InvalidInputError("a frequency grid is required")
    lo, hi = nuclear_frequencies(params, b_parallel)
    lines = (
        Line(lo.frequency, shape.width, shape.contrast * pops[2], None, lo.label),
        Line(hi.frequency, shape.width, shape.contrast * pops[0], None, hi.label),
    )
    return synthesize(grid, lines, shape.baseline)


def p1_coresonance_field(params: NVParams) -> float:
    """Field where the NV ground |0>-|-1> splitting equals the P1 Zeeman splitting."""
    return params.D / (2 * params.gamma_e)


@dataclass(frozen=True)
class P1DipParams:
    """Uncalibrated NV-P1 cross-relaxation dip; widths in gauss."""

    depth0: float = 0.3
    width0_g: float = 2.0
    slope_g_per_deg: float = 2.0

    def __post_init__(self):
        if not (0 < self.depth0 < 1 and self.width0_g > 0 and self.slope_g_per_deg >= 0):
            raise InvalidInputError("need 0 < depth0 < 1, width0 > 0, slope >= 0")

    def width(self, misalignment_deg: float) -> float:
        return self.width0_g + self.slope_g_per_deg * abs(misalignment_deg)

    def depth(self, misalignment_deg: float) -> float:
        return self.depth0 * self.width0_g / self.width(misalignment_deg)


def p1_dip_pl(b, misalignment_deg: float, dip: P1DipParams, center_g: float):
    return 1.0 - dip.depth(misalignment_deg) * lorentzian(b, center_g, dip.width(misalignment_deg))


def p1_dip_profile(b_grid, misalignment_deg: float, dip: P1DipParams = P1DipParams(),
                   params: NVParams = NVParams()) -> SpectrumTrace:
    """PL versus |B| near the NV-P1 co-resonance for a given misalignment."""
    bc = p1_coresonance_field(params)
    line = Line(bc, dip.width(misalignment_deg), dip.depth(misalignment_deg), None, "NV-P1")
    return synthesize(b_grid, (line,), 1.0, axis="field_G")
