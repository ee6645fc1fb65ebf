"""Nuclear spin dynamics under RF driving: Rabi and Ramsey traces, damped
cosine fitting, and the single-tone Lambda-system lineshape.

Times are in microseconds and RF frequencies/detunings in kHz (cycle
frequencies); a phase 2*pi*f*t therefore carries a factor 1e-3.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .errors import InvalidInputError
from .spectra import Line, SpectrumTrace
from .spin import NVParams, nuclear_frequencies

log = logging.getLogger(__name__)

TWO_PI_KHZ_US = 2 * math.pi * 1e-3


@dataclass(frozen=True)
class DriveParams:
    rabi_khz: float
    detuning_khz: float = 0.0
    sequence: tuple = ()

    def __post_init__(self):
        if self.rabi_khz < 0:
            raise InvalidInputError("Rabi frequency must be >= 0")
        for step in self.sequence:
            if step[1] < 0:
                raise InvalidInputError("pulse and delay durations must be >= 0")


@dataclass(frozen=True)
class DecayParams:
    t1_rho_us: float = math.inf
    t2_star_us: float = math.inf

    def __post_init__(self):
        if not (self.t1_rho_us > 0 and self.t2_star_us > 0):
            raise InvalidInputError("decay times must be positive (or inf)")


# Presets from the levitated-diamond measurements.
RABI_PRESET = (DriveParams(8.5, 0.0), DecayParams(t1_rho_us=840.0))
RAMSEY_PRESET = (DriveParams(8.5, 10.0), DecayParams(t2_star_us=120.0))
BULK_RAMSEY_PRESET = (DriveParams(8.5, 50.0), DecayParams(t2_star_us=137.0))


@dataclass(frozen=True)
class TimeTrace:
    t_us: np.ndarray
    signal: np.ndarray
    metadata: dict = field(default_factory=dict)


def _time_grid(grid) -> np.ndarray:
    t = np.asarray(grid, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise InvalidInputError("time grid must be a non-empty 1-D array")
    if np.any(t < 0) or (t.size > 1 and np.any(np.diff(t) <= 0)):
        raise InvalidInputError("time grid must be non-negative and strictly increasing")
    return t


def _envelope(t, tau):
    return np.ones_like(t) if math.isinf(tau) else np.exp(-t / tau)


def rabi_trace(drive: DriveParams, decay: DecayParams, grid) -> TimeTrace:
    """Population left in the initial |+1_N> after a pulse of length t."""
    t = _time_grid(grid)
    og = math.hypot(drive.rabi_khz, drive.detuning_khz)
    a = (drive.rabi_khz / og) ** 2 if og > 0 else 0.0
    osc = _envelope(t, decay.t1_rho_us) * np.cos(TWO_PI_KHZ_US * og * t)
    p = 1.0 - 0.5 * a * (1.0 - osc)
    meta = {"kind": "rabi", "rabi_khz": drive.rabi_khz, "detuning_khz": drive.detuning_khz,
            "generalized_khz": og, "t1_rho_us": decay.t1_rho_us}
    return TimeTrace(t, np.clip(p, 0.0, 1.0), meta)


def ramsey_trace(drive: DriveParams, decay: DecayParams, grid, total_dark_us: float | None = None,
                 phase: float = 0.0) -> TimeTrace:
    """Two hard pi/2 pulses separated by t; dark time padded to a fixed total."""
    t = _time_grid(grid)
    total = float(t[-1]) if total_dark_us is None else float(total_dark_us)
    if total < t[-1]:
        raise InvalidInputError("total dark duration must cover the longest delay")
    hard = drive.rabi_khz >= 10 * abs(drive.detuning_khz)
    if not hard:
        log.warning("hard-pulse approximation questionable: Rabi %.3g kHz < 10 x detuning %.3g kHz",
                    drive.rabi_khz, drive.detuning_khz)
    p = 0.5 + 0.5 * _envelope(t, decay.t2_star_us) * np.cos(TWO_PI_KHZ_US * drive.detuning_khz * t + phase)
    meta = {"kind": "ramsey", "detuning_khz": drive.detuning_khz, "t2_star_us": decay.t2_star_us,
            "phase": phase, "total_dark_us": total, "compensating_delay_us": (total - t).tolist(),
            "hard_pulse_valid": hard}
    return TimeTrace(t, np.clip(p, 0.0, 1.0), meta)


@dataclass(frozen=True)
class FitResult:
    amplitude: float
    frequency_khz: float
    phase: float
    decay_us: float
    offset: float
    stderr: dict
    residual_norm: float
    converged: bool
    decay_at_bound: bool
    nfev: int
    message: str = ""

    @property
    def params(self) -> tuple:
        return self.amplitude, self.frequency_khz, self.phase, self.decay_us, self.offset


def damped_cosine(t, amplitude, frequency_khz, phase, decay_us, offset):
    env = np.ones_like(np.asarray(t, float)) if math.isinf(decay_us) else np.exp(-np.asarray(t) / decay_us)
    return amplitude * env * np.cos(TWO_PI_KHZ_US * frequency_khz * np.asarray(t) + phase) + offset


def _guess(t, y):
    c = float(np.mean(y))
    yc = y - c
    dt = float(np.median(np.diff(t)))
    n = 8 * t.size
    spec = np.abs(np.fft.rfft(yc, n))
    freqs = np.fft.rfftfreq(n, dt) * 1e3  # kHz
    f = float(freqs[1 + int(np.argmax(spec[1:]))])
    basis = np.column_stack([np.cos(TWO_PI_KHZ_US * f * t), np.sin(TWO_PI_KHZ_US * f * t)])
    (a, b), *_ = np.linalg.lstsq(basis, yc, rcond=None)
    return math.hypot(a, b), f, math.atan2(-b, a), float(t[-1] - t[0]), c


def fit_damped_cosine(trace: TimeTrace, guess=None, decay_upper_us: float | None = None,
                      xtol: float = 1e-10, max_iter: int = 200) -> FitResult:
    """Least-squares fit of A exp(-t/T) cos(2 pi f t + phi) + C.

    The decay is fitted as a rate bounded below by 1/decay_upper_us, so an
    undamped trace lands on the bound and is flagged instead of diverging.
    """
    t, y = np.asarray(trace.t_us, float), np.asarray(trace.signal, float)
    if t.size < 8:
        raise InvalidInputError("need at least 8 samples")
    span = float(t[-1] - t[0])
    upper = 1e3 * span if decay_upper_us is None else float(decay_upper_us)
    a0, f0, ph0, tau0, c0 = _guess(t, y) if guess is None else guess
    tau0 = min(tau0, upper) if math.isfinite(tau0) else upper
    x0 = np.array([abs(a0), f0, ph0, 1.0 / tau0, c0])
    lo = np.array([0.0, 0.0, -np.inf, 1.0 / upper, -np.inf])
    x0 = np.maximum(x0, lo)

    def model(x):
        a, f, ph, k, c = x
        return a * np.exp(-k * t) * np.cos(TWO_PI_KHZ_US * f * t + ph) + c

    def resid(x):
        return model(x) - y

    def jac(x):
        a, f, ph, k, c = x
        e = np.exp(-k * t)
        arg = TWO_PI_KHZ_US * f * t + ph
        cos, sin = np.cos(arg), np.sin(arg)
        return np.column_stack([e * cos, -a * e * sin * TWO_PI_KHZ_US * t, -a * e * sin, -t * a * e * cos,
                                np.ones_like(t)])

    res = least_squares(resid, x0, jac=jac, bounds=(lo, np.full(5, np.inf)), method="trf",
                        x_scale="jac", xtol=xtol, ftol=1e-15, gtol=1e-15, max_nfev=max_iter)
    a, f, ph, k, c = res.x
    ph = float((ph + math.pi) % (2 * math.pi) - math.pi)
    j = res.jac
    dof = max(t.size - 5, 1)
    s2 = float(res.fun @ res.fun) / dof
    cov = np.linalg.pinv(j.T @ j) * s2
    err = np.sqrt(np.clip(np.diag(cov), 0, None))
    at_bound = bool(k <= lo[3] * (1 + 1e-9))
    return FitResult(
        amplitude=float(a), frequency_khz=float(f), phase=ph, decay_us=float(1.0 / k), offset=float(c),
        stderr={"amplitude": float(err[0]), "frequency_khz": float(err[1]), "phase": float(err[2]),
                "decay_us": float(err[3] / k**2), "offset": float(err[4])},
        residual_norm=float(np.linalg.norm(res.fun)),
        converged=bool(res.status > 0),
        decay_at_bound=at_bound,
        nfev=int(res.nfev),
        message=str(res.message),
    )


# --- Lambda system ------------------------------------------------------------

def _liouvillian(h: np.ndarray, collapse: list) -> np.ndarray:
    """Column-stacking Lindblad superoperator (batched over the leading axis of h)."""
    n = h.shape[-1]
    eye = np.eye(n)
    lv = -1j * (np.kron(eye, h) - np.kron(np.swapaxes(h, -1, -2), eye))
    for c in collapse:
        cdc = c.conj().T @ c
        lv = lv + np.kron(c.conj(), c) - 0.5 * np.kron(eye, cdc) - 0.5 * np.kron(cdc.T, eye)
    return lv


def _steady_state(lv: np.ndarray) -> np.ndarray:
    n2 = lv.shape[-1]
    n = int(round(math.sqrt(n2)))
    a = lv.copy()
    trace_row = np.eye(n).reshape(-1, order="F")
    a[..., 0, :] = trace_row
    rhs = np.zeros(a.shape[:-1], dtype=complex)
    rhs[..., 0] = 1.0
    rho = np.linalg.solve(a, rhs[..., None])[..., 0]
    return rho.reshape(*rho.shape[:-1], n, n, order="F")


def lambda_populations(f_upper_mhz: float, f_lower_mhz: float, rf_mhz, rabi_upper_khz: float,
                       rabi_lower_khz: float, t2_star_us: float = 120.0, pump_rate_per_us: float = 0.05,
                       leak_rate_per_us: float = 0.005) -> np.ndarray:
    """Steady-state populations (+1, 0, -1) of the Lambda system vs RF frequency.

    |+1_N> and |-1_N> both couple to the shared |0_N>; optical pumping moves
    -1 -> 0 -> +1, a symmetric leak relaxes neighbours, each level dephases at
    1/T2*.  Rotating frame and RWA; one tone drives both transitions.
    """
    rf = np.atleast_1d(np.asarray(rf_mhz, dtype=float))
    w = 2 * math.pi  # MHz * us -> rad
    h = np.zeros((rf.size, 3, 3), dtype=complex)
    h[:, 0, 0] = w * (rf - f_upper_mhz)
    h[:, 2, 2] = w * (rf - f_lower_mhz)
    h[:, 0, 1] = h[:, 1, 0] = w * rabi_upper_khz * 1e-3 / 2
    h[:, 2, 1] = h[:, 1, 2] = w * rabi_lower_khz * 1e-3 / 2

    def op(i, j):
        m = np.zeros((3, 3), dtype=complex)
        m[i, j] = 1.0
        return m

    gp, gl = math.sqrt(pump_rate_per_us), math.sqrt(leak_rate_per_us)
    collapse = [gp * op(0, 1), gp * op(1, 2), gl * op(1, 0), gl * op(0, 1), gl * op(2, 1), gl * op(1, 2)]
    if math.isfinite(t2_star_us):
        collapse += [math.sqrt(1.0 / t2_star_us) * op(k, k) for k in range(3)]
    rho = _steady_state(_liouvillian(h, collapse))
    return np.real(np.diagonal(rho, axis1=-2, axis2=-1))


def lambda_lineshape(params: NVParams, b_parallel: float, rabi_khz: float, grid, contrast: float = 0.006,
                     t2_star_us: float = 120.0, pump_rate_per_us: float = 0.05,
                     leak_rate_per_us: float = 0.005, drive_upper: bool = True,
                     drive_lower: bool = True) -> SpectrumTrace:
    """ODNMR signal of a single RF tone sweeping across both nuclear lines.

    PL = 1 - contrast * (p_+1(undriven) - p_+1(rf)): the dip tracks how much
    the tone depolarizes the bright |+1_N> state.
    """
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size == 0 or (g.size > 1 and np.any(np.diff(g) <= 0)):
        raise InvalidInputError("grid must be a non-empty, strictly increasing 1-D array")
    lo, hi = nuclear_frequencies(params, b_parallel)
    ru = rabi_khz if drive_upper else 0.0
    rl = rabi_khz if drive_lower else 0.0
    kw = dict(t2_star_us=t2_star_us, pump_rate_per_us=pump_rate_per_us, leak_rate_per_us=leak_rate_per_us)
    ref = lambda_populations(hi.frequency, lo.frequency, g[:1], 0.0, 0.0, **kw)[0, 0]
    pops = lambda_populations(hi.frequency, lo.frequency, g, ru, rl, **kw)
    pl = 1.0 - contrast * (ref - pops[:, 0])
    lines = (Line(lo.frequency, math.nan, math.nan, None, lo.label),
             Line(hi.frequency, math.nan, math.nan, None, hi.label))
    return SpectrumTrace(g, np.clip(pl, 0.0, 1.0), lines)


def dip_asymmetry(trace: SpectrumTrace, center: float, half_window: float, signed: bool = False) -> float:
    """Max |D(c+x) - D(c-x)| / D(c) over 0 < x <= half_window, with D = 1 - PL.

    ``signed`` returns the value at the extremum, positive when the low side
    is deeper.
    """
    x = np.linspace(0, half_window, 201)[1:]
    depth = 1.0 - trace.pl
    d0 = float(np.interp(center, trace.x, depth))
    if d0 <= 0:
        return 0.0
    diff = np.interp(center - x, trace.x, depth) - np.interp(center + x, trace.x, depth)
    k = int(np.argmax(np.abs(diff)))
    val = diff[k] / d0
    return float(val if signed else abs(val))
