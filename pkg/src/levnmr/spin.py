"""Spin-1 operator algebra and NV-center Hamiltonians.

All energies are in MHz, fields in gauss.  Basis order for a spin-1 is
(|+1>, |0>, |-1>); the coupled electron-nuclear basis is the Kronecker
product electron (x) nuclear, so index = 3 * i_e + i_n.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment, minimize_scalar

from .errors import AmbiguousLabelError, InvalidInputError

SPIN1_M = (1, 0, -1)
GROUND = "ground"
EXCITED = "excited"
MANIFOLDS = (GROUND, EXCITED)


@dataclass(frozen=True)
class NVParams:
    """Physical constants of the coupled NV electron / 14N nuclear system.

    Units: D, D_ex, Q_n, A_* and strain_E in MHz; gamma_e in MHz/G;
    gamma_n in kHz/G (signed).
    """

    D: float = 2870.0
    D_ex: float = 1430.0
    gamma_e: float = 2.8025
    gamma_n: float = -0.307
    Q_n: float = -4.94
    A_perp_ex: float = 20.0
    A_zz_ex: float = -20.0
    strain_E: float = 0.0
    ground_hyperfine: bool = False
    A_zz_gs: float = -2.16

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.type in ("float", float) and not math.isfinite(v):
                raise InvalidInputError(f"NVParams.{f.name} must be finite, got {v}")
        if self.D <= 0 or self.D_ex < 0:
            raise InvalidInputError("zero-field splittings must be positive")
        if self.gamma_e <= 0:
            raise InvalidInputError("gamma_e must be positive")
        if self.A_perp_ex < 0:
            raise InvalidInputError("A_perp_ex must be >= 0")
        if self.strain_E < 0:
            raise InvalidInputError("strain_E must be >= 0")

    @property
    def gamma_n_mhz(self) -> float:
        return self.gamma_n * 1e-3

    def replace(self, **changes) -> "NVParams":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update(changes)
        return NVParams(**kw)


@dataclass(frozen=True)
class FieldVector:
    """Static field: magnitude in gauss and a unit direction in the NV frame
    (or lab frame, depending on the caller)."""

    magnitude: float
    direction: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if d.shape != (3,) or not np.all(np.isfinite(d)):
            raise InvalidInputError("direction must be a finite 3-vector")
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise InvalidInputError(f"direction must be a unit vector, |n| = {np.linalg.norm(d)!r}")
        if not math.isfinite(self.magnitude) or self.magnitude < 0:
            raise InvalidInputError("field magnitude must be finite and >= 0")
        object.__setattr__(self, "direction", tuple(float(x) for x in d))

    @classmethod
    def aligned(cls, magnitude: float) -> "FieldVector":
        return cls(float(magnitude), (0.0, 0.0, 1.0))

    @classmethod
    def from_angles(cls, magnitude: float, theta_deg: float, phi_deg: float = 0.0) -> "FieldVector":
        th, ph = math.radians(theta_deg), math.radians(phi_deg)
        n = np.array([math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph), math.cos(th)])
        return cls(float(magnitude), tuple(n / np.linalg.norm(n)))

    @classmethod
    def from_vector(cls, b) -> "FieldVector":
        b = np.asarray(b, dtype=float)
        mag = float(np.linalg.norm(b))
        if mag == 0.0:
            return cls(0.0)
        return cls(mag, tuple(b / mag))

    @property
    def vector(self) -> np.ndarray:
        return self.magnitude * np.asarray(self.direction)

    @property
    def parallel(self) -> float:
        return self.magnitude * self.direction[2]

    @property
    def misalignment_deg(self) -> float:
        return math.degrees(math.acos(min(1.0, abs(self.direction[2]))))


@dataclass(frozen=True)
class SpinOperatorSet:
    Sx: np.ndarray
    Sy: np.ndarray
    Sz: np.ndarray
    S_plus: np.ndarray
    S_minus: np.ndarray


def spin1_operators() -> SpinOperatorSet:
    s2 = math.sqrt(2.0)
    sp = np.array([[0, s2, 0], [0, 0, s2], [0, 0, 0]], dtype=complex)
    sm = sp.conj().T
    sz = np.diag([1.0, 0.0, -1.0]).astype(complex)
    sx = (sp + sm) / 2
    sy = (sp - sm) / 2j
    for m in (sp, sm, sz, sx, sy):
        m.setflags(write=False)
    return SpinOperatorSet(sx, sy, sz, sp, sm)


_OPS = spin1_operators()
_I3 = np.eye(3, dtype=complex)


def _check_manifold(manifold: str) -> None:
    if manifold not in MANIFOLDS:
        raise InvalidInputError(f"manifold must be one of {MANIFOLDS}, got {manifold!r}")


def hamiltonian_electron(params: NVParams, field: FieldVector, manifold: str = GROUND) -> np.ndarray:
    """3x3 electron Hamiltonian in the NV frame (z along the N-V axis)."""
    _check_manifold(manifold)
    o = _OPS
    d = params.D if manifold == GROUND else params.D_ex
    bx, by, bz = field.vector
    h = d * (o.Sz @ o.Sz) + params.gamma_e * (bx * o.Sx + by * o.Sy + bz * o.Sz)
    if manifold == GROUND and params.strain_E:
        h = h + params.strain_E * (o.Sx @ o.Sx - o.Sy @ o.Sy)
    return h


def nuclear_hamiltonian(params: NVParams, field: FieldVector) -> np.ndarray:
    # Zeeman and quadrupole axes are crystal-fixed along N-V; transverse nuclear Zeeman dropped.
    o = _OPS
    return params.gamma_n_mhz * field.parallel * o.Sz + params.Q_n * (o.Sz @ o.Sz)


def hyperfine_hamiltonian(params: NVParams, manifold: str = EXCITED) -> np.ndarray:
    _check_manifold(manifold)
    o = _OPS
    if manifold == EXCITED:
        return (params.A_perp_ex / 2) * (np.kron(o.S_plus, o.S_minus) + np.kron(o.S_minus, o.S_plus)) + \
            params.A_zz_ex * np.kron(o.Sz, o.Sz)
    if params.ground_hyperfine:
        return params.A_zz_gs * np.kron(o.Sz, o.Sz)
    return np.zeros((9, 9), dtype=complex)


def hamiltonian_coupled(params: NVParams, field: FieldVector, manifold: str = GROUND) -> np.ndarray:
    """9x9 electron (x) 14N Hamiltonian."""
    he = hamiltonian_electron(params, field, manifold)
    hn = nuclear_hamiltonian(params, field)
    return np.kron(he, _I3) + np.kron(_I3, hn) + hyperfine_hamiltonian(params, manifold)


def basis_labels(dim: int) -> tuple:
    if dim == 3:
        return SPIN1_M
    if dim == 9:
        return tuple((me, mi) for me in SPIN1_M for mi in SPIN1_M)
    return tuple(range(dim))


def format_label(label) -> str:
    if isinstance(label, tuple):
        me, mi = label
        return f"|{me:+d}_e,{mi:+d}_N>".replace("+0", "0")
    if isinstance(label, (int, np.integer)) and label in SPIN1_M:
        return f"|{label:+d}_e>".replace("+0", "0")
    return str(label)


@dataclass(frozen=True)
class LevelSet:
    energies: np.ndarray
    states: np.ndarray
    labels: tuple
    dominance: np.ndarray
    basis: tuple = field(repr=False, default=())

    @property
    def dimension(self) -> int:
        return len(self.energies)

    def index_of(self, label) -> int:
        idx = [i for i, lab in enumerate(self.labels) if lab == label]
        if not idx:
            raise AmbiguousLabelError(f"no level labelled {format_label(label)}", (label, None))
        if len(idx) > 1:
            raise AmbiguousLabelError(
                f"label {format_label(label)} is dominant for levels {idx[0]} and {idx[1]}",
                (idx[0], idx[1]),
            )
        return idx[0]

    def energy(self, label) -> float:
        return float(self.energies[self.index_of(label)])

    def vector(self, label) -> np.ndarray:
        return self.states[:, self.index_of(label)]

    def rows(self):
        for e, lab, w in zip(self.energies, self.labels, self.dominance):
            yield float(e), format_label(lab), float(w)


def _fix_phase(v: np.ndarray) -> np.ndarray:
    mag = np.abs(v)
    k = int(np.argmax(mag >= mag.max() * (1 - 1e-12)))
    return v * (abs(v[k]) / v[k])


def eigensystem(H, labels: Sequence | None = None, tol: float = 1e-9) -> LevelSet:
    """Hermitian eigendecomposition with deterministic ordering, phase and labels.

    Degenerate eigenvectors are rotated onto the basis kets with the largest
    projection onto the degenerate subspace (ties broken by basis index).
    """
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise InvalidInputError("H must be a square matrix")
    if not np.all(np.isfinite(H)):
        raise InvalidInputError("H contains non-finite entries")
    n = H.shape[0]
    norm = float(np.linalg.norm(H, 2)) if n else 0.0
    if np.max(np.abs(H - H.conj().T), initial=0.0) > 1e-9 * norm:
        raise InvalidInputError("H is not Hermitian")
    labels = tuple(labels) if labels is not None else basis_labels(n)
    if len(labels) != n:
        raise InvalidInputError("label count does not match dimension")

    w, v = np.linalg.eigh((H + H.conj().T) / 2)
    gap_tol = tol * max(1.0, norm)
    vecs = v.copy()
    i = 0
    while i < n:
        j = i + 1
        while j < n and w[j] - w[j - 1] <= gap_tol:
            j += 1
        if j - i > 1:
            block = v[:, i:j]
            proj = np.sum(np.abs(block.conj().T) ** 2, axis=0)  # weight of each basis ket
            picks = sorted(np.argsort(-proj, kind="stable")[: j - i])
            cand = block @ (block.conj().T[:, picks])
            q, _ = np.linalg.qr(cand)
            # QR keeps the span; re-sort columns by their dominant basis index
            cols = [q[:, c] for c in range(j - i)]
            cols.sort(key=lambda c: int(np.argmax(np.abs(c) ** 2)))
            for c, col in enumerate(cols):
                vecs[:, i + c] = col
        i = j
    for k in range(n):
        vecs[:, k] = _fix_phase(vecs[:, k])
    weights = np.abs(vecs) ** 2
    dom_idx = np.argmax(weights, axis=0)
    dom = weights[dom_idx, np.arange(n)]
    vecs.setflags(write=False)
    return LevelSet(
        energies=w.copy(),
        states=vecs,
        labels=tuple(labels[k] for k in dom_idx),
        dominance=dom,
        basis=labels,
    )


def relabel_by_assignment(levels: LevelSet) -> LevelSet:
    """Unique labels from the one-to-one level/basis matching of maximal total weight.

    Identical to the dominant-ket labels whenever those are already unique;
    resolves strongly mixed cases (e.g. large transverse fields) where two
    levels share a dominant ket.
    """
    weights = np.abs(np.asarray(levels.states)) ** 2
    rows, cols = linear_sum_assignment(-weights)
    lab = [None] * levels.dimension
    dom = np.empty(levels.dimension)
    for r, c in zip(rows, cols):
        lab[c] = levels.basis[r]
        dom[c] = weights[r, c]
    return LevelSet(levels.energies, levels.states, tuple(lab), dom, levels.basis)


def eslac_field(params: NVParams) -> float:
    """Field (G) at which the excited |0> and |-1> electron levels cross."""
    return params.D_ex / params.gamma_e


def coupled_crossing_field(params: NVParams, window: float = 0.25) -> float:
    """Flip-flop anti-crossing field of the full 9x9 excited Hamiltonian.

    Minimizes the splitting between the two eigenstates carrying the most
    weight on |0_e,0_N> and |-1_e,+1_N>, the pair that drives polarization.
    """
    b0 = eslac_field(params)
    if b0 == 0:
        return 0.0
    ia = basis_labels(9).index((0, 0))
    ib = basis_labels(9).index((-1, 1))

    def gap(b):
        w, v = np.linalg.eigh(hamiltonian_coupled(params, FieldVector.aligned(b), EXCITED))
        weight = np.abs(v[ia]) ** 2 + np.abs(v[ib]) ** 2
        k1, k2 = np.argsort(-weight)[:2]
        return abs(w[k1] - w[k2])

    res = minimize_scalar(gap, bounds=(b0 * (1 - window), b0 * (1 + window)), method="bounded",
                          options={"xatol": 1e-6})
    return float(res.x)


@dataclass(frozen=True)
class Transition:
    frequency: float
    initial: object
    final: object
    weight: float
    zero_character: float

    @property
    def label(self) -> str:
        return f"{format_label(self.initial)}->{format_label(self.final)}"


ELECTRON = "electron"
NUCLEAR = "nuclear"


def _pairs(levels: LevelSet, rule: str) -> Iterable[tuple]:
    dim = levels.dimension
    o = _OPS
    if rule == ELECTRON:
        if dim == 3:
            op = o.Sx
            yield from (((0,), (m,), op) for m in (1, -1))
        elif dim == 9:
            op = np.kron(o.Sx, _I3)
            for mi in SPIN1_M:
                for me in (1, -1):
                    yield (0, mi), (me, mi), op
        else:
            raise InvalidInputError("electron transitions need a 3- or 9-level set")
    elif rule == NUCLEAR:
        if dim != 9:
            raise InvalidInputError("nuclear transitions need the 9-level coupled set")
        op = np.kron(_I3, o.Sx)
        for mi in (-1, 1):
            yield (0, mi), (0, 0), op
    else:
        raise InvalidInputError(f"unknown transition rule {rule!r}")


def transition_frequencies(levels: LevelSet, rule: str = ELECTRON) -> list[Transition]:
    """Allowed transitions out of the m_s = 0 manifold, sorted by frequency.

    weight = |<f|Sx|i>|^2 (or Ix) normalized to its unmixed value of 1/2;
    zero_character = weight of the initial eigenvector on electron |m_s=0>.
    """
    labels = levels.labels
    if len(set(labels)) != len(labels):
        seen = {}
        for k, lab in enumerate(labels):
            if lab in seen:
                raise AmbiguousLabelError(
                    f"levels {seen[lab]} and {k} share dominant label {format_label(lab)}", (seen[lab], k))
            seen[lab] = k
    zero_rows = [k for k, lab in enumerate(levels.basis) if (lab[0] if isinstance(lab, tuple) else lab) == 0]
    out = []
    for init, fin, op in _pairs(levels, rule):
        if levels.dimension == 3:
            init, fin = init[0], fin[0]
        i, f = levels.index_of(init), levels.index_of(fin)
        vi, vf = levels.states[:, i], levels.states[:, f]
        weight = float(abs(vf.conj() @ op @ vi) ** 2 / 0.5)
        zc = float(np.sum(np.abs(vi[zero_rows]) ** 2))
        out.append(Transition(abs(float(levels.energies[f] - levels.energies[i])), init, fin, weight, zc))
    out.sort(key=lambda t: t.frequency)
    return out


def nuclear_frequencies(params: NVParams, b_parallel: float) -> tuple[Transition, Transition]:
    """(lower, upper) nuclear lines in the ground m_s = 0 manifold, aligned field."""
    levels = eigensystem(hamiltonian_coupled(params, FieldVector.aligned(abs(b_parallel)), GROUND))
    lo, hi = transition_frequencies(levels, NUCLEAR)
    return lo, hi
