import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm
from scipy.optimize import brentq

from levnmr.errors import AmbiguousLabelError, InvalidInputError
from levnmr.spin import (
    ELECTRON,
    EXCITED,
    GROUND,
    NUCLEAR,
    FieldVector,
    NVParams,
    basis_labels,
    coupled_crossing_field,
    eigensystem,
    eslac_field,
    format_label,
    hamiltonian_coupled,
    hamiltonian_electron,
    hyperfine_hamiltonian,
    nuclear_frequencies,
    spin1_operators,
    transition_frequencies,
)

P = NVParams()
OPS = spin1_operators()
KET = {1: np.array([1, 0, 0], complex), 0: np.array([0, 1, 0], complex), -1: np.array([0, 0, 1], complex)}

angles = st.floats(0, 180, allow_nan=False)
azimuths = st.floats(0, 360, allow_nan=False)
fields = st.floats(0, 1500, allow_nan=False)


# --- operators ---------------------------------------------------------------

def test_commutator_sx_sy():
    c = OPS.Sx @ OPS.Sy - OPS.Sy @ OPS.Sx
    assert np.max(np.abs(c - 1j * OPS.Sz)) < 1e-12


def test_sz_diagonal_and_ladders():
    assert np.allclose(np.diag(OPS.Sz), [1, 0, -1])
    assert np.allclose(OPS.S_plus, OPS.Sx + 1j * OPS.Sy)
    assert np.allclose(OPS.S_minus, OPS.Sx - 1j * OPS.Sy)


def test_s_minus_on_zero():
    assert np.allclose(OPS.S_minus @ KET[0], math.sqrt(2) * KET[-1])


def test_sz_on_plus_one():
    assert np.allclose(OPS.Sz @ KET[1], KET[1])


def test_ladder_commutator():
    assert np.allclose(OPS.S_plus @ OPS.S_minus - OPS.S_minus @ OPS.S_plus, 2 * OPS.Sz)


def test_operators_read_only():
    with pytest.raises(ValueError):
        OPS.Sz[0, 0] = 5


# --- params / field ----------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(D=0), dict(gamma_e=-1), dict(A_perp_ex=-1), dict(strain_E=-0.1),
                                dict(D=math.inf), dict(Q_n=math.nan)])
def test_params_invariants(kw):
    with pytest.raises(InvalidInputError):
        NVParams(**kw)


def test_field_requires_unit_direction():
    with pytest.raises(InvalidInputError):
        FieldVector(10.0, (0.0, 0.0, 1.1))
    with pytest.raises(InvalidInputError):
        FieldVector(-1.0)


def test_field_from_vector_roundtrip():
    f = FieldVector.from_vector([3.0, 0.0, 4.0])
    assert f.magnitude == pytest.approx(5.0)
    assert f.misalignment_deg == pytest.approx(math.degrees(math.atan2(3, 4)))


# --- Hamiltonians ------------------------------------------------------------

@given(b=fields, th=angles, ph=azimuths, manifold=st.sampled_from([GROUND, EXCITED]))
def test_hermitian(b, th, ph, manifold):
    f = FieldVector.from_angles(b, th, ph)
    for h in (hamiltonian_electron(P.replace(strain_E=3.0), f, manifold), hamiltonian_coupled(P, f, manifold)):
        norm = max(np.linalg.norm(h, 2), 1.0)
        assert np.max(np.abs(h - h.conj().T)) < 1e-12 * norm


@given(b=fields, manifold=st.sampled_from([GROUND, EXCITED]))
def test_aligned_closed_form(b, manifold):
    d = P.D if manifold == GROUND else P.D_ex
    h = hamiltonian_electron(P, FieldVector.aligned(b), manifold)
    assert np.allclose(h, np.diag(np.diag(h)), atol=0)
    expected = sorted([0.0, d + P.gamma_e * b, d - P.gamma_e * b])
    got = eigensystem(h).energies
    assert np.allclose(got, expected, rtol=1e-9, atol=1e-9 * max(1.0, d + P.gamma_e * b))


def test_ground_zero_field_eigenvalues():
    w = eigensystem(hamiltonian_electron(P, FieldVector(0.0))).energies
    assert np.allclose(w, [0, 2870, 2870])


def test_ground_100G_transitions():
    lv = eigensystem(hamiltonian_electron(P, FieldVector.aligned(100.0)))
    f = [t.frequency for t in transition_frequencies(lv, ELECTRON)]
    assert f == pytest.approx([2589.75, 3150.25], abs=1e-9)


def test_excited_levels_coincide_at_eslac():
    h = hamiltonian_electron(P, FieldVector.aligned(eslac_field(P)), EXCITED)
    assert abs(h[1, 1] - h[2, 2]) < 1e-9


def test_strain_splits_zero_field_doublet():
    w = eigensystem(hamiltonian_electron(P.replace(strain_E=5.0), FieldVector(0.0))).energies
    assert w[2] - w[1] == pytest.approx(10.0)


@given(b=st.floats(1, 1000), th=angles, ph1=azimuths, ph2=azimuths)
def test_azimuthal_invariance(b, th, ph1, ph2):
    # with E = 0 the spectrum depends only on the polar angle
    e1 = eigensystem(hamiltonian_coupled(P, FieldVector.from_angles(b, th, ph1), EXCITED)).energies
    e2 = eigensystem(hamiltonian_coupled(P, FieldVector.from_angles(b, th, ph2), EXCITED)).energies
    assert np.allclose(e1, e2, rtol=1e-9, atol=1e-9 * np.abs(e1).max())


@given(b=st.floats(1, 1000), th=angles, ph=azimuths, rx=st.floats(-3, 3), ry=st.floats(-3, 3), rz=st.floats(-3, 3))
def test_rotational_covariance(b, th, ph, rx, ry, rz):
    # rotating field and spin operators together is a unitary conjugation
    f = FieldVector.from_angles(b, th, ph)
    h = hamiltonian_electron(P.replace(strain_E=2.0), f)
    u = expm(-1j * (rx * OPS.Sx + ry * OPS.Sy + rz * OPS.Sz))
    e1 = np.linalg.eigvalsh(h)
    e2 = np.linalg.eigvalsh(u @ h @ u.conj().T)
    assert np.allclose(e1, e2, rtol=1e-9, atol=1e-9 * np.abs(e1).max())


def test_coupled_zero_field_quadrupole():
    lv = eigensystem(hamiltonian_coupled(P, FieldVector(0.0), GROUND))
    e0 = lv.energies[:3]
    assert np.allclose(e0, [P.Q_n, P.Q_n, 0.0])  # Q < 0: |+-1_N> below |0_N>
    assert abs(lv.energies[2] - lv.energies[0]) == pytest.approx(4.94)


def _ket9(me, mi):
    return np.kron(KET[me], KET[mi])


def test_hyperfine_flip_flop_element():
    h = hyperfine_hamiltonian(P, EXCITED)
    assert _ket9(-1, 1).conj() @ h @ _ket9(0, 0) == pytest.approx(P.A_perp_ex)


def test_hyperfine_ladder_oracle():
    # every element from closed-form ladder coefficients sqrt(s(s+1) - m(m +- 1))
    def ladder(m, up):
        return math.sqrt(2 - m * (m + (1 if up else -1)))

    a_perp, a_zz = 20.0, -20.0
    h = hyperfine_hamiltonian(P.replace(A_perp_ex=a_perp, A_zz_ex=a_zz), EXCITED)
    labels = basis_labels(9)
    for i, (me, mi) in enumerate(labels):
        for j, (me2, mi2) in enumerate(labels):
            want = 0.0
            if (me2, mi2) == (me, mi):
                want = a_zz * me * mi
            elif me2 == me + 1 and mi2 == mi - 1:
                want = a_perp / 2 * ladder(me, True) * ladder(mi, False)
            elif me2 == me - 1 and mi2 == mi + 1:
                want = a_perp / 2 * ladder(me, False) * ladder(mi, True)
            assert h[j, i] == pytest.approx(want, abs=1e-12)


def test_ground_hyperfine_off_by_default():
    assert not np.any(hyperfine_hamiltonian(P, GROUND))
    h = hyperfine_hamiltonian(P.replace(ground_hyperfine=True), GROUND)
    assert np.allclose(np.diag(h).real, [P.A_zz_gs * me * mi for me, mi in basis_labels(9)])


def test_coupled_structure():
    f = FieldVector.from_angles(300.0, 7.0, 20.0)
    h = hamiltonian_coupled(P, f, EXCITED)
    i3 = np.eye(3)
    hn = P.gamma_n_mhz * f.parallel * OPS.Sz + P.Q_n * OPS.Sz @ OPS.Sz
    want = np.kron(hamiltonian_electron(P, f, EXCITED), i3) + np.kron(i3, hn) + hyperfine_hamiltonian(P, EXCITED)
    assert np.allclose(h, want)


def test_excited_product_states_far_from_eslac():
    lv = eigensystem(hamiltonian_coupled(P, FieldVector.aligned(100.0), EXCITED))
    assert np.all(lv.dominance > 0.999)


# --- eigensystem -------------------------------------------------------------

def test_eigensystem_diagonal():
    lv = eigensystem(np.diag([3.0, 1.0, 2.0]))
    assert np.allclose(lv.energies, [1, 2, 3])
    assert np.allclose(np.abs(lv.states), np.eye(3)[:, [1, 2, 0]])


def test_eigensystem_two_level():
    a = 2.5
    lv = eigensystem(np.array([[0, a], [a, 0]]))
    assert np.allclose(lv.energies, [-a, a])
    assert np.allclose(lv.states[:, 0], np.array([1, -1]) / math.sqrt(2))
    assert np.allclose(lv.states[:, 1], np.array([1, 1]) / math.sqrt(2))


def test_eigensystem_rejects_non_hermitian():
    with pytest.raises(InvalidInputError):
        eigensystem(np.array([[0, 1], [0, 0]]))


hermitian9 = st.lists(st.floats(-1e3, 1e3), min_size=162, max_size=162).map(
    lambda xs: (lambda m: m + m.conj().T)(np.array(xs[:81]).reshape(9, 9) + 1j * np.array(xs[81:]).reshape(9, 9)))


@given(h=hermitian9)
def test_eigensystem_invariants(h):
    lv = eigensystem(h)
    norm = max(np.linalg.norm(h, 2), 1.0)
    v = lv.states
    assert np.all(np.diff(lv.energies) >= 0)
    assert np.allclose(v.conj().T @ v, np.eye(9), atol=1e-9)
    assert np.max(np.abs(h @ v - v * lv.energies)) < 1e-8 * norm
    assert np.max(np.abs(v @ np.diag(lv.energies) @ v.conj().T - h)) < 1e-8 * norm
    k = np.argmax(np.abs(v) >= np.abs(v).max(axis=0) * (1 - 1e-12), axis=0)
    lead = v[k, np.arange(9)]
    assert np.allclose(lead.imag, 0, atol=1e-12) and np.all(lead.real > 0)


def test_eigensystem_deterministic_degenerate_block():
    lv1 = eigensystem(hamiltonian_electron(P, FieldVector(0.0)))
    lv2 = eigensystem(hamiltonian_electron(P, FieldVector(0.0)))
    assert np.array_equal(lv1.states, lv2.states)
    assert set(lv1.labels) == {1, 0, -1}


# --- crossings ---------------------------------------------------------------

def test_eslac_values():
    assert eslac_field(P.replace(D_ex=1400.0)) == pytest.approx(499.55, abs=0.05)
    assert eslac_field(P) == pytest.approx(510.26, abs=0.01)
    assert eslac_field(P.replace(D_ex=0.0)) == 0.0


def test_eslac_bisection_oracle():
    def gap(b):
        h = hamiltonian_electron(P, FieldVector.aligned(b), EXCITED)
        return float(np.real(h[1, 1] - h[2, 2]))

    assert brentq(gap, 300, 700, xtol=1e-10) == pytest.approx(eslac_field(P), abs=1e-6)


def test_coupled_crossing_near_electron_value():
    assert abs(coupled_crossing_field(P) - eslac_field(P)) < 10.0


# --- transitions -------------------------------------------------------------

def test_zero_field_electron_twofold():
    lv = eigensystem(hamiltonian_electron(P, FieldVector(0.0)))
    f = [t.frequency for t in transition_frequencies(lv, ELECTRON)]
    assert f == pytest.approx([2870.0, 2870.0])


def test_nuclear_lines_436G():
    lo, hi = nuclear_frequencies(P, 436.0)
    assert lo.frequency == pytest.approx(4.806, abs=5e-3)
    assert hi.frequency == pytest.approx(5.074, abs=5e-3)
    assert (lo.initial, hi.initial) == ((0, -1), (0, 1))
    assert lo.final == hi.final == (0, 0)


def test_nuclear_lines_zero_field():
    lo, hi = nuclear_frequencies(P, 0.0)
    assert lo.frequency == pytest.approx(4.94) and hi.frequency == pytest.approx(4.94)


@given(b=st.floats(0, 1000))
def test_nuclear_splitting_linear(b):
    lo, hi = nuclear_frequencies(P, b)
    assert hi.frequency - lo.frequency == pytest.approx(2 * abs(P.gamma_n_mhz) * b, abs=1e-9)


def test_transition_weights_unmixed():
    lv = eigensystem(hamiltonian_coupled(P, FieldVector.aligned(200.0), GROUND))
    for t in transition_frequencies(lv, NUCLEAR) + transition_frequencies(lv, ELECTRON):
        assert t.weight == pytest.approx(1.0)
        assert t.frequency > 0


def test_ambiguous_labels_raise_with_pair():
    lv = eigensystem(hamiltonian_electron(P, FieldVector.aligned(100.0)))
    bad = type(lv)(lv.energies, lv.states, (0, 0, 1), lv.dominance, lv.basis)
    with pytest.raises(AmbiguousLabelError) as ei:
        transition_frequencies(bad, ELECTRON)
    assert ei.value.pair == (0, 1)


def test_format_label():
    assert format_label(0) == "|0_e>"
    assert format_label((-1, 1)) == "|-1_e,+1_N>"


def test_relabel_matches_dominant_when_unique():
    from levnmr.spin import relabel_by_assignment

    lv = eigensystem(hamiltonian_coupled(P, FieldVector.from_angles(200.0, 10.0), GROUND))
    assert relabel_by_assignment(lv).labels == lv.labels


def test_relabel_resolves_transverse_mixing():
    from levnmr.spin import relabel_by_assignment

    from levnmr.spectra import ClassGeometry

    # exactly transverse for class 2: |+1>,|-1> split 50/50 and the dominant labels collide
    v = np.array([0.0, 1.0, 1.0]) / math.sqrt(2)
    lv = eigensystem(hamiltonian_electron(P, ClassGeometry().field_in_class(FieldVector(291.6875, tuple(v)), 2)))
    with pytest.raises(AmbiguousLabelError):
        transition_frequencies(lv, ELECTRON)
    fixed = relabel_by_assignment(lv)
    assert sorted(fixed.labels) == [-1, 0, 1]
    assert len(transition_frequencies(fixed, ELECTRON)) == 2
