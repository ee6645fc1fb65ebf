"""Optical-cycle Markov model of 14N polarization through the excited-state
level anti-crossing.

One optical cycle: the electron is promoted to |0_e>^ex keeping m_I, evolves
under the coupled excited Hamiltonian for an exponentially distributed dwell,
then is reset to |0_e> in the ground state keeping whatever m_I it ended in.
A symmetric per-neighbour leak then depolarizes the nucleus.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .levitation import ParticleGeometry, TrapParams, sample_thermal_angles
from .spin import EXCITED, FieldVector, NVParams, basis_labels, hamiltonian_coupled, eslac_field
from .spectra import p1_coresonance_field

NUCLEAR_M = (1, 0, -1)
PAIR_UP = "0->+1"  # |0_e,0_N> -> |-1_e,+1_N>
PAIR_LOW = "-1->0"  # |0_e,-1_N> -> |-1_e,0_N>
_PAIR_MI = {PAIR_UP: 0, PAIR_LOW: -1}

_LABELS = basis_labels(9)
_SUB = [k for k, lab in enumerate(_LABELS) if lab[0] in (0, -1)]
_SUB_LABELS = [_LABELS[k] for k in _SUB]


@dataclass(frozen=True)
class PumpModel:
    """Optical pumping parameters (all uncalibrated defaults)."""

    laser_rate: float = 1e6  # optical cycles per second
    dwell_ns: float = 12.0
    leak: float = 1e-3  # per cycle, to each neighbouring m_I
    repolarization: float = 1.0  # probability the cycle starts from |0_e>
    readout_efficiency: float = 0.006
    averaging: str = "exponential"  # or "full"
    p1_penalty_depth: float = 0.0  # 0 disables the NV-P1 penalty
    p1_penalty_width_g: float = 5.0

    def __post_init__(self):
        if min(self.laser_rate, self.dwell_ns, self.readout_efficiency, self.p1_penalty_width_g) < 0:
            raise InvalidInputError("pump parameters must be >= 0")
        if not 0 <= self.leak <= 0.5:
            raise InvalidInputError("leak must lie in [0, 0.5]")
        if not 0 <= self.repolarization <= 1:
            raise InvalidInputError("repolarization must lie in [0, 1]")
        if not 0 <= self.p1_penalty_depth <= 1:
            raise InvalidInputError("p1_penalty_depth must lie in [0, 1]")
        if self.averaging not in ("exponential", "full"):
            raise InvalidInputError("averaging must be 'exponential' or 'full'")


@dataclass(frozen=True)
class PumpResult:
    populations: tuple  # (p+1, p0, p-1)
    polarization: float
    cycles_to_90: int | None
    odnmr_contrast: float
    transition_matrix: np.ndarray = field(repr=False)
    absorbing: tuple = ()
    frozen: bool = False
    polarization_stderr: float | None = None


def flip_flop_probability(params: NVParams, field: FieldVector, pair: str = PAIR_UP,
                          dwell_ns: float = 12.0, averaging: str = "full") -> float:
    """Time-averaged two-level flip-flop probability for one excited pair.

    Omega = 2|<-1_e, m+1|H|0_e, m>| and Delta is the diagonal gap of the two
    basis states.  ``averaging='exponential'`` applies the finite-dwell factor
    (w tau)^2 / (1 + (w tau)^2) with w = 2 pi sqrt(Omega^2 + Delta^2).
    """
    if pair not in _PAIR_MI:
        raise InvalidInputError(f"pair must be {PAIR_UP!r} or {PAIR_LOW!r}")
    if not dwell_ns > 0:
        raise InvalidInputError("dwell must be positive")
    mi = _PAIR_MI[pair]
    h = hamiltonian_coupled(params, field, EXCITED)
    a, b = _LABELS.index((0, mi)), _LABELS.index((-1, mi + 1))
    omega = 2 * abs(h[b, a])
    delta = float(np.real(h[b, b] - h[a, a]))
    og2 = omega**2 + delta**2
    if og2 == 0:
        return 0.0
    p = 0.5 * omega**2 / og2
    if averaging == "exponential":
        wt = 2 * math.pi * math.sqrt(og2) * dwell_ns * 1e-3
        p *= wt**2 / (1 + wt**2)
    elif averaging != "full":
        raise InvalidInputError("averaging must be 'exponential' or 'full'")
    return p


def excited_transfer(params: NVParams, field: FieldVector, model: PumpModel = PumpModel(),
                     start_me: int = 0) -> np.ndarray:
    """3x3 m_I -> m_I' transfer for one excited-state visit starting in |start_me, m_I>."""
    h = hamiltonian_coupled(params, field, EXCITED)[np.ix_(_SUB, _SUB)]
    w, v = np.linalg.eigh(h)
    dw = w[:, None] - w[None, :]
    if model.averaging == "full":
        kern = (np.abs(dw) <= 1e-9 * max(1.0, np.abs(w).max())).astype(complex)
    else:
        kern = 1.0 / (1.0 + 2j * math.pi * dw * model.dwell_ns * 1e-3)
    init = [_SUB_LABELS.index((start_me, m)) for m in NUCLEAR_M]
    # c[a, b, k] = <b|k><k|a>
    c = v[None, :, :] * v[init, :].conj()[:, None, :]
    prob = np.real(np.einsum("abk,kl,abl->ab", c, kern, c.conj()))
    out = np.zeros((3, 3))
    for j, lab in enumerate(_SUB_LABELS):
        out[:, NUCLEAR_M.index(lab[1])] += prob[:, j]
    out = np.clip(out, 0.0, None)
    return out / out.sum(axis=1, keepdims=True)


def leak_matrix(eps: float) -> np.ndarray:
    return np.array([[1 - eps, eps, 0.0], [eps, 1 - 2 * eps, eps], [0.0, eps, 1 - eps]])


def cycle_matrix(params: NVParams, field: FieldVector, model: PumpModel = PumpModel()) -> np.ndarray:
    f = excited_transfer(params, field, model, 0)
    if model.repolarization < 1:
        f = model.repolarization * f + (1 - model.repolarization) * excited_transfer(params, field, model, -1)
    t = f @ leak_matrix(model.leak)
    return t / t.sum(axis=1, keepdims=True)


def stationary(t: np.ndarray, start=None, tol: float = 1e-13, max_squarings: int = 80) -> np.ndarray:
    """Limit distribution of ``start`` under the chain (uniform start by default).

    Uses repeated squaring, so reducible chains return the start-dependent limit.
    """
    start = np.full(t.shape[0], 1.0 / t.shape[0]) if start is None else np.asarray(start, float)
    m = t.copy()
    prev = start @ m
    for _ in range(max_squarings):
        m = m @ m
        m /= m.sum(axis=1, keepdims=True)
        cur = start @ m
        if np.max(np.abs(cur - prev)) < tol:
            break
        prev = cur
    return cur / cur.sum()


def _absorbing(t: np.ndarray) -> tuple:
    return tuple(NUCLEAR_M[i] for i in range(3) if abs(t[i, i] - 1.0) < 1e-15)


def _cycles_to(t: np.ndarray, target: float, cap: int = 200_000) -> int | None:
    dist = np.full(3, 1.0 / 3)
    for n in range(cap + 1):
        if dist[0] - dist[2] >= target:
            return n
        dist = dist @ t
    return None


def _p1_penalty(params: NVParams, field: FieldVector, model: PumpModel) -> float:
    if model.p1_penalty_depth == 0:
        return 0.0
    hw = model.p1_penalty_width_g / 2
    x = field.magnitude - p1_coresonance_field(params)
    return model.p1_penalty_depth * hw**2 / (x**2 + hw**2)


def pump_steady_state(params: NVParams, field: FieldVector, model: PumpModel = PumpModel()) -> PumpResult:
    t = cycle_matrix(params, field, model)
    absorbing = _absorbing(t)
    frozen = len(absorbing) == 3
    pi = np.full(3, 1.0 / 3) if frozen else stationary(t)
    f = _p1_penalty(params, field, model)
    if f:
        pi = (1 - f) * pi + f / 3
    pi = np.clip(pi, 0.0, None)
    pi = pi / pi.sum()
    pol = float(pi[0] - pi[2])
    cycles = _cycles_to(t, 0.9) if pol >= 0.9 and not f else None
    return PumpResult(
        populations=tuple(float(x) for x in pi),
        polarization=pol,
        cycles_to_90=cycles,
        odnmr_contrast=model.readout_efficiency * float(pi[0]),
        transition_matrix=t,
        absorbing=absorbing,
        frozen=frozen,
    )


@dataclass(frozen=True)
class PolarizationMap:
    fields_g: np.ndarray
    angles_deg: np.ndarray
    results: tuple  # rows over field, columns over angle

    @property
    def polarization(self) -> np.ndarray:
        return np.array([[r.polarization for r in row] for row in self.results])

    @property
    def argmax(self) -> tuple[float, float]:
        p = self.polarization
        i, j = np.unravel_index(int(np.argmax(p)), p.shape)
        return float(self.fields_g[i]), float(self.angles_deg[j])

    def rows(self):
        for i, b in enumerate(self.fields_g):
            for j, th in enumerate(self.angles_deg):
                r = self.results[i][j]
                yield float(b), float(th), r.polarization, *r.populations


def polarization_map(params: NVParams, model: PumpModel, fields_g, angles_deg) -> PolarizationMap:
    fields_g = np.atleast_1d(np.asarray(fields_g, dtype=float))
    angles_deg = np.atleast_1d(np.asarray(angles_deg, dtype=float))
    if fields_g.size == 0 or angles_deg.size == 0:
        raise InvalidInputError("field and angle ranges must be non-empty")
    rows = tuple(
        tuple(pump_steady_state(params, FieldVector.from_angles(b, th), model) for th in angles_deg)
        for b in fields_g
    )
    return PolarizationMap(fields_g, angles_deg, rows)


def levitated_polarization(params: NVParams, model: PumpModel, field: FieldVector, angle_std_deg: float,
                           n_samples: int = 10_000, seed: int | None = 0) -> PumpResult:
    """Polarization averaged over thermal libration of the particle.

    Each sample tilts the field by a Gaussian angle in the plane of the
    nominal misalignment; only |tilt| matters for the axially symmetric
    excited Hamiltonian.
    """
    if n_samples < 1 or angle_std_deg < 0:
        raise InvalidInputError("need n_samples >= 1 and angle_std_deg >= 0")
    if angle_std_deg == 0:
        return pump_steady_state(params, field, model)
    # geometry is irrelevant once the std is fixed
    tilts = sample_thermal_angles(ParticleGeometry(1.0), TrapParams(1.0), n_samples, seed, std_deg=angle_std_deg)
    theta0 = field.misalignment_deg
    pops = np.empty((n_samples, 3))
    for i, d in enumerate(tilts):
        r = pump_steady_state(params, FieldVector.from_angles(field.magnitude, abs(theta0 + d)), model)
        pops[i] = r.populations
    mean = pops.mean(axis=0)
    pol_samples = pops[:, 0] - pops[:, 2]
    pol = float(mean[0] - mean[2])
    return PumpResult(
        populations=tuple(float(x) for x in mean / mean.sum()),
        polarization=pol,
        cycles_to_90=None,
        odnmr_contrast=model.readout_efficiency * float(mean[0]),
        transition_matrix=np.full((3, 3), np.nan),
        polarization_stderr=float(pol_samples.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else 0.0,
    )


def polarization_peak_field(params: NVParams, model: PumpModel = PumpModel(), span_g: float = 40.0,
                            step_g: float = 0.25) -> float:
    """Aligned-field B (G) maximizing polarization on a grid around the ESLAC."""
    b0 = eslac_field(params)
    grid = np.arange(b0 - span_g, b0 + span_g + step_g / 2, step_g)
    pol = [pump_steady_state(params, FieldVector.aligned(b), model).polarization for b in grid]
    return float(grid[int(np.argmax(pol))])
