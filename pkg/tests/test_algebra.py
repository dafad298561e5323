import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinforge.algebra import (IX, IY, IZ, BooleanFunction, OperatorTerm, SpinState, cnot_matrix,
                               conjugate, coupling_propagator, decompose, embed, expectation,
                               is_unitary, matrix_of_term, parse_term_expression,
                               permutation_propagator, rotation_propagator, swap_matrix, term_dict,
                               z_rotation)
from spinforge.errors import NumericalConsistencyError, ParseError, ValidationError

from .conftest import random_hermitian

T = OperatorTerm.of


def rho_i():
    alpha = np.diag([1.0, 0.0])
    beta = np.diag([0.0, 1.0])
    m = np.array([[1.0]])
    for op in (alpha, alpha, alpha, alpha, beta):
        m = np.kron(m, op)
    return 16 * m - 0.5 * np.eye(32)


def test_spin_operators_have_half_eigenvalues():
    for op in (IX, IY, IZ):
        assert np.allclose(sorted(np.linalg.eigvalsh(op)), [-0.5, 0.5])
    assert np.allclose(IX @ IY - IY @ IX, 1j * IZ)


def test_matrix_of_term_identity_and_iz():
    assert np.allclose(matrix_of_term(T(1, {}), 1), np.eye(2))
    assert np.allclose(matrix_of_term(T(1, {0: "z"}), 1), np.diag([0.5, -0.5]))


def test_matrix_of_full_z_product():
    m = matrix_of_term(T(16, {k: "z" for k in range(5)}), 5)
    assert np.allclose(m, np.diag(np.diag(m)))
    d = np.diag(m).real
    assert d[0] == pytest.approx(0.5)
    parity = np.array([bin(i).count("1") % 2 for i in range(32)])
    assert np.allclose(d, 0.5 * (1 - 2 * parity))


def test_matrix_of_term_rejects_out_of_range_spin():
    with pytest.raises(IndexError):
        matrix_of_term(T(1, {3: "x"}), 2)


def test_operator_term_validation_and_str():
    with pytest.raises(ValidationError):
        T(1, {0: "q"})
    with pytest.raises(ValidationError):
        OperatorTerm(float("nan"), ())
    assert str(T(2, {0: "z", 1: "z"})) == "2*I1z*I2z"
    assert str(T(-1, {4: "x"})) == "-I5x"
    assert T(3, {1: "y", 0: "x"}).spins == (0, 1)


def test_polarization_form_equals_projector():
    alpha = np.eye(2) / 2 + IZ
    beta = np.eye(2) / 2 - IZ
    m = np.array([[1.0]])
    for op in (alpha, alpha, alpha, alpha, beta):
        m = np.kron(m, op)
    target = -0.5 * np.eye(32)
    target[1, 1] += 16
    assert np.max(np.abs(16 * m - 0.5 * np.eye(32) - target)) < 1e-12


def test_decompose_roundtrip_simple():
    terms = decompose(matrix_of_term(T(2, {0: "z", 1: "z"}), 2))
    assert terms == [T(2, {0: "z", 1: "z"})]
    assert decompose(np.zeros((8, 8))) == []


def test_decompose_rho_i_gives_signed_powers_of_two():
    terms = decompose(rho_i() + 0.5 * np.eye(32) - np.trace(rho_i() + 0.5 * np.eye(32)) / 32 * np.eye(32))
    terms = [t for t in terms if t.factors]
    assert len(terms) == 31
    for t in terms:
        assert all(a == "z" for _, a in t.factors)
        sign = -1 if 4 in t.spins else 1
        assert t.coeff == pytest.approx(sign * 2 ** (t.order - 1), abs=1e-10)


def test_decompose_rejects_non_hermitian():
    m = np.zeros((2, 2), dtype=complex)
    m[0, 1] = 1
    with pytest.raises(ValidationError):
        decompose(m)


def test_basis_is_orthogonal_on_three_spins():
    basis = [T(1, {k: a for k, a in enumerate(axes) if a})
             for axes in itertools.product([None, "x", "y", "z"], repeat=3)]
    mats = [matrix_of_term(b, 3) for b in basis]
    gram = np.array([[np.trace(a @ b) for b in mats] for a in mats])
    assert np.max(np.abs(gram - np.diag(np.diag(gram)))) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_decompose_matrix_roundtrip(n, seed):
    rng = np.random.default_rng(seed)
    h = random_hermitian(rng, n)
    back = sum((matrix_of_term(t, n) for t in decompose(h)), np.zeros_like(h))
    assert np.max(np.abs(back - h)) < 1e-10


def test_u90_turns_rho_i_into_rho_0():
    u = rotation_propagator(None, 90, 90, 5)
    rho0 = conjugate(SpinState(rho_i()), u)
    expected = {((k, "x"),): 1.0 for k in range(4)}
    expected[((4, "x"),)] = -1.0
    got = {f: c for f, c in term_dict(rho0).items() if len(f) == 1}
    assert got == pytest.approx(expected)
    assert expectation(rho0, T(1, {4: "x"})) == pytest.approx(-1)


def test_rotation_special_angles():
    assert np.allclose(rotation_propagator([0], 0, 37, 2), np.eye(4))
    full = rotation_propagator([1], 360, 123, 2)
    assert np.allclose(full, -np.eye(4))
    with pytest.raises(IndexError):
        rotation_propagator([2], 90, 0, 2)


@settings(max_examples=30, deadline=None)
@given(st.floats(-720, 720), st.floats(-720, 720), st.sets(st.integers(0, 2), min_size=1))
def test_rotations_are_unitary(angle, phase, spins):
    assert is_unitary(rotation_propagator(spins, angle, phase, 3), 1e-12)


def test_coupling_half_period_makes_antiphase():
    J, n = 94.1, 2
    u = coupling_propagator(0, 1, J, 1 / (2 * J), n)
    s = conjugate(SpinState.from_terms([T(1, {0: "x"})], n), u)
    assert term_dict(s) == pytest.approx({((0, "y"), (1, "z")): 2.0})
    assert np.allclose(coupling_propagator(0, 1, J, 0.0, n), np.eye(4))


def test_coupling_matches_matrix_exponential():
    from scipy.linalg import expm  # test-only oracle

    n, J, t = 3, 65.2, 1.7e-3
    h = 2 * np.pi * J * embed(IZ, 0, n) @ embed(IZ, 2, n)
    assert np.allclose(coupling_propagator(0, 2, J, t, n), expm(-1j * h * t), atol=1e-12)


def test_coupling_j45_grid_delay_angle():
    angle = 2 * np.pi * 366.0 * 1.38975e-3
    assert abs(angle - np.pi) < 0.055


def test_coupling_errors():
    with pytest.raises(ValidationError):
        coupling_propagator(0, 1, 10.0, -1e-3, 2)
    with pytest.raises(ValidationError):
        coupling_propagator(0, 0, 10.0, 1e-3, 2)


def test_z_rotation_is_exponential_of_iz():
    from scipy.linalg import expm

    u = z_rotation(1, 37.0, 2)
    assert np.allclose(u, expm(-1j * np.deg2rad(37.0) * embed(IZ, 1, 2)))


def test_permutation_propagator_examples():
    f0 = BooleanFunction.constant(4, 0)
    assert np.allclose(permutation_propagator(f0, 5), np.eye(32))
    fb = BooleanFunction.from_callable(4, lambda a, b, c, d: a ^ b ^ c ^ d)
    u = permutation_propagator(fb, 5)
    src = 0b10000
    assert np.argmax(u[:, src]) == 0b10001
    with pytest.raises(ValidationError):
        permutation_propagator(f0, 4)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=8, max_size=8))
def test_permutation_is_involution(table):
    u = permutation_propagator(BooleanFunction(3, table), 4)
    assert np.array_equal(u @ u, np.eye(16))
    assert set(np.unique(u)) <= {0.0, 1.0}


def test_boolean_function_validation():
    with pytest.raises(ValidationError):
        BooleanFunction(2, [0, 1, 0])
    with pytest.raises(ValidationError):
        BooleanFunction(1, [0, 2])
    f = BooleanFunction(2, [0, 1, 1, 0])
    assert f.is_balanced and not f.is_constant
    assert BooleanFunction.constant(3, 1).is_constant


def test_conjugate_preserves_spectrum_and_trace(rng):
    h = random_hermitian(rng, 3)
    u = rotation_propagator([0, 2], 73, 11, 3) @ coupling_propagator(0, 1, 20, 3e-3, 3)
    s = conjugate(SpinState(h), u)
    assert np.allclose(np.linalg.eigvalsh(s.matrix), np.linalg.eigvalsh(h))
    assert abs(np.trace(s.matrix) - np.trace(h)) < 1e-12
    assert np.allclose(conjugate(SpinState(h), np.eye(8)).matrix, h)
    with pytest.raises(ValidationError):
        conjugate(SpinState(h), np.eye(4))


def test_expectation_is_real_and_checked(rng):
    h = random_hermitian(rng, 2)
    assert isinstance(expectation(h, T(1, {0: "x"})), float)
    m = np.zeros((4, 4), dtype=complex)
    m[0, 2] = 1.0  # non-Hermitian, gives a complex overlap with I1x
    with pytest.raises(NumericalConsistencyError):
        expectation(m, T(1, {0: "y"}))


@pytest.mark.parametrize("k,l", [(0, 1), (1, 2), (2, 3), (3, 4)])
def test_cnot_matrix_obeys_product_operator_rules(k, l):
    n = 5
    u = cnot_matrix(k, l, n)
    ikx = SpinState.from_terms([T(1, {k: "x"})], n)
    assert term_dict(conjugate(ikx, u)) == pytest.approx({((k, "x"), (l, "x")): 2.0})
    both = SpinState.from_terms([T(2, {k: "x", l: "x"})], n)
    assert term_dict(conjugate(both, u)) == pytest.approx({((k, "x"),): 1.0})
    ilx = SpinState.from_terms([T(1, {l: "x"})], n)
    assert term_dict(conjugate(ilx, u)) == pytest.approx({((l, "x"),): 1.0})


def test_swap_matrix_exchanges_bits():
    u = swap_matrix(0, 1, 3)
    assert np.argmax(u[:, 0b100]) == 0b010
    assert np.array_equal(u @ u, np.eye(8))


def test_spin_state_frames_and_validation():
    s = SpinState.zero(2)
    s.shift_frame(1, 400)
    assert s.frame_phase[1] == pytest.approx(40)
    with pytest.raises(ValidationError):
        SpinState(np.zeros((3, 3)))
    with pytest.raises(ValidationError):
        SpinState(np.zeros((4, 4)), [0.0])


def test_aligned_applies_deferred_rotation():
    s = SpinState.from_terms([T(1, {0: "x"})], 1)
    s.shift_frame(0, 90)
    # frame +90 means a pending z rotation by -90: Ix -> -Iy
    assert term_dict(s.aligned()) == pytest.approx({((0, "y"),): -1.0})


@pytest.mark.parametrize("text,expected", [
    ("2*I1x*I2z", [T(2, {0: "x", 1: "z"})]),
    ("I5x*-1", [T(-1, {4: "x"})]),
    ("I1z - 0.5*I2y + I3x*I1z", [T(1, {0: "z"}), T(-0.5, {1: "y"}), T(1, {0: "z", 2: "x"})]),
    (" -I3z ", [T(-1, {2: "z"})]),
])
def test_parse_term_expression(text, expected):
    assert parse_term_expression(text) == expected


@pytest.mark.parametrize("text,col", [("I2q", 3), ("2**I1x", 3), ("I1x*I1y", 5), ("", 1),
                                      ("I1x +", 5), ("I0x", 1), ("I1x I2x", 5)])
def test_parse_term_expression_errors(text, col):
    with pytest.raises(ParseError) as info:
        parse_term_expression(text)
    assert info.value.column == col
